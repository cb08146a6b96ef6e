//! Benchmark CSV loading, chronological splits, global standardization,
//! sliding windows with cycle indices, and the synthetic location-scale
//! generator.

mod synth;
mod windows;

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

pub use synth::{generate_synthetic, BaseProcess, Profile, SynthSpec};
pub use windows::{make_windows, window_starts, WindowBatch, WindowStream};

use crate::error::{Error, Result};
use crate::ndmath::Array2;

/// How rows are divided into train / validation / test.
///
/// The ETT rules first truncate the file to its first 20 months (12/4/4
/// months of train/val/test, the common benchmark borders) and then split
/// 6:2:2. On ETTh1 with a 96-step lookback this yields the (8545, 2881, 2881)
/// lookback-window counts of the usual benchmark tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    /// `train_end = ⌊6N/10⌋`, `val_end = ⌊8N/10⌋`.
    Ratio622,
    /// `train_end = ⌊7N/10⌋`, `val_end = N - ⌊2N/10⌋`.
    Ratio712,
    /// Truncate to `20 * 30 * 24` rows, then 6:2:2.
    EttHourly,
    /// Truncate to `20 * 30 * 24 * 4` rows, then 6:2:2.
    EttMinutely,
}

impl SplitRule {
    fn truncate_to(self) -> Option<usize> {
        match self {
            SplitRule::EttHourly => Some(20 * 30 * 24),
            SplitRule::EttMinutely => Some(20 * 30 * 24 * 4),
            _ => None,
        }
    }

    /// `(train_end, val_end)` for `n` rows (after any truncation).
    pub fn bounds(self, n: usize) -> (usize, usize) {
        match self {
            SplitRule::Ratio622 | SplitRule::EttHourly | SplitRule::EttMinutely => (n * 6 / 10, n * 8 / 10),
            SplitRule::Ratio712 => (n * 7 / 10, n - n * 2 / 10),
        }
    }
}

impl FromStr for SplitRule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "6:2:2" | "ratio622" => Ok(SplitRule::Ratio622),
            "7:1:2" | "ratio712" => Ok(SplitRule::Ratio712),
            "ett-hourly" => Ok(SplitRule::EttHourly),
            "ett-minutely" => Ok(SplitRule::EttMinutely),
            _ => Err(format!("unknown split rule `{s}` (6:2:2, 7:1:2, ett-hourly, ett-minutely)")),
        }
    }
}

impl fmt::Display for SplitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRule::Ratio622 => "6:2:2",
            SplitRule::Ratio712 => "7:1:2",
            SplitRule::EttHourly => "ett-hourly",
            SplitRule::EttMinutely => "ett-minutely",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A uniformly sampled multivariate series with chronological split bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub columns: Vec<String>,
    values: Array2,
    step_offset: usize,
    cycle_length: usize,
    train_end: usize,
    val_end: usize,
}

impl SeriesDataset {
    /// `values` is `N x C`, one row per step.
    pub fn new(
        name: impl Into<String>,
        columns: Vec<String>,
        values: Array2,
        cycle_length: usize,
        rule: SplitRule,
    ) -> Result<Self> {
        let values = match rule.truncate_to() {
            Some(n) if values.rows() > n => values.slice_rows(0, n),
            _ => values,
        };
        let (train_end, val_end) = rule.bounds(values.rows());
        Self::with_bounds(name, columns, values, cycle_length, train_end, val_end)
    }

    pub fn with_bounds(
        name: impl Into<String>,
        columns: Vec<String>,
        values: Array2,
        cycle_length: usize,
        train_end: usize,
        val_end: usize,
    ) -> Result<Self> {
        if cycle_length == 0 {
            return Err(Error::config("cycle length must be at least 1"));
        }
        if columns.len() != values.cols() {
            return Err(Error::config(format!("{} column names for {} channels", columns.len(), values.cols())));
        }
        let n = values.rows();
        if !(0 < train_end && train_end < val_end && val_end < n) {
            return Err(Error::config(format!(
                "invalid split bounds ({train_end}, {val_end}) for {n} rows; need 0 < train_end < val_end < N"
            )));
        }
        Ok(Self { name: name.into(), columns, values, step_offset: 0, cycle_length, train_end, val_end })
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn steps(&self) -> usize {
        self.values.rows()
    }

    /// The `N x C` value matrix.
    pub fn values(&self) -> &Array2 {
        &self.values
    }

    pub fn cycle_length(&self) -> usize {
        self.cycle_length
    }

    pub fn split_bounds(&self) -> (usize, usize) {
        (self.train_end, self.val_end)
    }

    pub fn split_range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Val => self.train_end..self.val_end,
            Split::Test => self.val_end..self.steps(),
        }
    }

    /// Position of `row` in the global timeline.
    #[inline]
    pub fn step_index(&self, row: usize) -> usize {
        self.step_offset + row
    }

    /// Cycle position of `row`.
    #[inline]
    pub fn tau(&self, row: usize) -> usize {
        self.step_index(row) % self.cycle_length
    }

    /// Same data with a different cycle length.
    pub fn with_cycle_length(&self, cycle_length: usize) -> Result<Self> {
        if cycle_length == 0 {
            return Err(Error::config("cycle length must be at least 1"));
        }
        Ok(Self { cycle_length, ..self.clone() })
    }

    /// Same data with the global timeline shifted to start at `offset`.
    pub fn with_step_offset(&self, offset: usize) -> Self {
        Self { step_offset: offset, ..self.clone() }
    }

    /// Same layout with values replaced (e.g. after scaling).
    pub fn with_values(&self, values: Array2) -> Self {
        assert_eq!(values.shape(), self.values.shape(), "with_values: shape mismatch");
        Self { values, ..self.clone() }
    }

    /// Writes `step,<columns...>` CSV that [`load_csv`] reads back.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "step,{}", self.columns.join(",")).map_err(io)?;
        for r in 0..self.steps() {
            write!(w, "{}", self.step_index(r)).map_err(io)?;
            for v in self.values.row(r) {
                write!(w, ",{v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Reads a benchmark CSV: a header row, a timestamp column, then numeric
/// channel columns.
pub fn load_csv(path: &Path, cycle_length: usize, rule: SplitRule) -> Result<SeriesDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    parse_csv(file, name, cycle_length, rule)
}

pub fn parse_csv<R: std::io::Read>(
    reader: R,
    name: String,
    cycle_length: usize,
    rule: SplitRule,
) -> Result<SeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::Parse { line, column: None, message: e.to_string() }
    };
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            column: None,
            message: "expected a timestamp column followed by at least one channel".into(),
        });
    }
    let columns: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let c = columns.len();
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        let data_row = i + 1;
        if rec.len() != c + 1 {
            return Err(Error::Parse {
                line,
                column: None,
                message: format!("data row {data_row}: expected {} fields, found {}", c + 1, rec.len()),
            });
        }
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                column: Some(j + 2),
                message: format!("data row {data_row}: non-numeric value `{cell}` in column `{}`", columns[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: Some(j + 2),
                    message: format!("data row {data_row}: non-finite value in column `{}`", columns[j]),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows < 2 {
        return Err(Error::Parse { line: rows + 1, column: None, message: format!("need at least 2 data rows, found {rows}") });
    }
    SeriesDataset::new(name, columns, Array2::new(rows, c, data), cycle_length, rule)
}

/// Per-channel standardization fitted on the training rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const SCALER_STD_FLOOR: f64 = 1e-8;

impl StandardScaler {
    /// Fits population mean and standard deviation over `ds`'s train rows.
    pub fn fit(ds: &SeriesDataset) -> Self {
        let train = ds.split_range(Split::Train);
        let n = train.len() as f64;
        let c = ds.channels();
        let mut mean = vec![0.0; c];
        for r in train.clone() {
            for (m, v) in mean.iter_mut().zip(ds.values().row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for r in train {
            for ((s, v), m) in var.iter_mut().zip(ds.values().row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(SCALER_STD_FLOOR)).collect();
        Self { mean, std }
    }

    /// Scales an `N x C` matrix.
    pub fn transform(&self, values: &Array2) -> Array2 {
        let mut out = values.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    pub fn inverse(&self, values: &Array2) -> Array2 {
        let mut out = values.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
        out
    }

    /// Unscales a stacked `(windows·C) x H` matrix whose row `r` holds
    /// channel `r mod C`.
    pub fn inverse_channel_rows(&self, values: &Array2) -> Array2 {
        let mut out = values.clone();
        for r in 0..out.rows() {
            let c = r % self.mean.len();
            let (s, m) = (self.std[c], self.mean[c]);
            out.row_mut(r).iter_mut().for_each(|v| *v = *v * s + m);
        }
        out
    }

    pub fn apply(&self, ds: &SeriesDataset) -> SeriesDataset {
        ds.with_values(self.transform(ds.values()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(rows: usize, channels: usize) -> String {
        let mut s = String::from("date");
        for c in 0..channels {
            s.push_str(&format!(",c{c}"));
        }
        s.push('\n');
        for r in 0..rows {
            s.push_str(&format!("2020-01-01 {r:02}:00:00"));
            for c in 0..channels {
                s.push_str(&format!(",{}", r * 10 + c));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn ratio_split_arithmetic() {
        let ds = parse_csv(csv(10, 2).as_bytes(), "t".into(), 4, SplitRule::Ratio622).unwrap();
        assert_eq!((ds.channels(), ds.steps()), (2, 10));
        assert_eq!(ds.split_bounds(), (6, 8));
        assert_eq!(ds.values().row(3), &[30.0, 31.0]);
        let ds = parse_csv(csv(10, 2).as_bytes(), "t".into(), 4, SplitRule::Ratio712).unwrap();
        assert_eq!(ds.split_bounds(), (7, 8));
    }

    #[test]
    fn ett_rule_truncates_to_twenty_months() {
        assert_eq!(SplitRule::EttHourly.bounds(14400), (8640, 11520));
        assert_eq!(SplitRule::EttMinutely.bounds(57600), (34560, 46080));
    }

    #[test]
    fn non_numeric_cell_names_row() {
        let mut text = csv(10, 2);
        text = text.replace(",40,41", ",40,abc");
        let err = parse_csv(text.as_bytes(), "t".into(), 4, SplitRule::Ratio622).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 5"), "{msg}");
        assert!(msg.contains("line 6") && msg.contains("column 3"), "{msg}");
    }

    #[test]
    fn malformed_row_names_line() {
        let text = csv(10, 2).replace(",70,71", ",70");
        let err = parse_csv(text.as_bytes(), "t".into(), 4, SplitRule::Ratio622).unwrap_err();
        assert!(err.to_string().contains("line 9"), "{err}");
    }

    #[test]
    fn too_few_rows_is_rejected() {
        assert!(parse_csv(csv(1, 2).as_bytes(), "t".into(), 4, SplitRule::Ratio622).is_err());
        // 2 rows cannot hold three non-empty splits
        assert!(parse_csv(csv(2, 2).as_bytes(), "t".into(), 4, SplitRule::Ratio622).is_err());
    }

    #[test]
    fn scaler_uses_train_rows_only() {
        let values = Array2::from_rows(&[[1.0], [3.0], [100.0], [200.0], [300.0]]);
        let ds = SeriesDataset::with_bounds("s", vec!["x".into()], values, 1, 2, 3).unwrap();
        let sc = StandardScaler::fit(&ds);
        assert_eq!(sc.mean, vec![2.0]);
        assert_eq!(sc.std, vec![1.0]);
        let back = sc.inverse(&sc.transform(ds.values()));
        assert!(back.max_abs_diff(ds.values()) < 1e-9);
    }

    #[test]
    fn constant_channel_hits_std_floor() {
        let values = Array2::filled(10, 1, 4.0);
        let ds = SeriesDataset::with_bounds("s", vec!["x".into()], values, 1, 6, 8).unwrap();
        let sc = StandardScaler::fit(&ds);
        assert_eq!(sc.mean, vec![4.0]);
        assert_eq!(sc.std, vec![SCALER_STD_FLOOR]);
    }

    #[test]
    fn stacked_rows_unscale_by_channel() {
        let sc = StandardScaler { mean: vec![1.0, 10.0], std: vec![2.0, 3.0] };
        let y = Array2::from_rows(&[[0.0, 1.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0]]);
        let back = sc.inverse_channel_rows(&y);
        assert_eq!(back, Array2::from_rows(&[[1.0, 3.0], [10.0, 13.0], [3.0, 3.0], [7.0, 10.0]]));
    }

    #[test]
    fn csv_round_trip() {
        let ds = parse_csv(csv(12, 3).as_bytes(), "t".into(), 4, SplitRule::Ratio712).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        ds.write_csv(&p).unwrap();
        let back = load_csv(&p, 4, SplitRule::Ratio712).unwrap();
        assert_eq!(back.values(), ds.values());
        assert_eq!(back.columns, ds.columns);
    }
}
