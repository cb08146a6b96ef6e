//! Learnable cyclical embedding pools.
//!
//! The phase pool `W_m` is `L x T` and shared by all channels. The amplitude
//! pool `W_v` is `L x C x T`, stored as an `(L·C) x T` matrix whose slab for
//! cycle position `tau` is rows `tau·C .. tau·C + C`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ndmath::Array2;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPools {
    pub phase: Array2,
    pub amplitude: Array2,
    cycle_length: usize,
    channels: usize,
    lookback: usize,
}

/// Standard deviation of a Xavier-normal initializer.
pub fn xavier_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Xavier-normal pools; fans are `(L, T)` for the phase pool and `(L, C·T)`
/// for the amplitude pool.
pub fn init_pools<R: Rng + ?Sized>(l: usize, c: usize, t: usize, rng: &mut R) -> EmbeddingPools {
    assert!(l >= 1 && c >= 1 && t >= 1, "init_pools: L, C, T must be at least 1");
    let phase = Array2::random_normal(l, t, xavier_std(l, t), rng);
    let amplitude = Array2::random_normal(l * c, t, xavier_std(l, c * t), rng);
    EmbeddingPools { phase, amplitude, cycle_length: l, channels: c, lookback: t }
}

impl EmbeddingPools {
    pub fn from_arrays(phase: Array2, amplitude: Array2, channels: usize) -> Result<Self> {
        let (l, t) = phase.shape();
        if l == 0 || t == 0 || channels == 0 {
            return Err(Error::Format("empty embedding pool".into()));
        }
        if amplitude.shape() != (l * channels, t) {
            return Err(Error::Format(format!(
                "amplitude pool is {}x{}, expected {}x{t} for L={l}, C={channels}",
                amplitude.rows(),
                amplitude.cols(),
                l * channels
            )));
        }
        Ok(Self { phase, amplitude, cycle_length: l, channels, lookback: t })
    }

    pub fn zeros(l: usize, c: usize, t: usize) -> Self {
        Self { phase: Array2::zeros(l, t), amplitude: Array2::zeros(l * c, t), cycle_length: l, channels: c, lookback: t }
    }

    pub fn cycle_length(&self) -> usize {
        self.cycle_length
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    fn check_tau(&self, tau: usize) -> Result<()> {
        if tau >= self.cycle_length {
            return Err(Error::config(format!("cycle index {tau} out of range for L = {}", self.cycle_length)));
        }
        Ok(())
    }

    /// `1 x T` phase row for `tau`.
    pub fn lookup_phase(&self, tau: usize) -> Result<Array2> {
        self.check_tau(tau)?;
        Ok(self.phase.slice_rows(tau, tau + 1))
    }

    /// `C x T` amplitude slab for `tau`.
    pub fn lookup_amplitude(&self, tau: usize) -> Result<Array2> {
        self.check_tau(tau)?;
        Ok(self.amplitude.slice_rows(tau * self.channels, (tau + 1) * self.channels))
    }

    /// Row indices of the amplitude slab for `tau`.
    pub fn amplitude_rows(&self, tau: usize) -> std::ops::Range<usize> {
        tau * self.channels..(tau + 1) * self.channels
    }

    pub fn param_count(&self) -> (usize, usize) {
        (self.phase.len(), self.amplitude.len())
    }

    /// Writes the phase pool: a `# phase L=.. C=.. T=..` line, a column
    /// header, then one `tau,v0,..` row per cycle position.
    pub fn write_phase_csv(&self, path: &Path) -> Result<()> {
        write_table(path, "phase", self, &["tau"], |r| vec![r], &self.phase)
    }

    /// Writes the amplitude pool, one `tau,channel,v0,..` row per slab row.
    pub fn write_amplitude_csv(&self, path: &Path) -> Result<()> {
        let c = self.channels;
        write_table(path, "amplitude", self, &["tau", "channel"], |r| vec![r / c, r % c], &self.amplitude)
    }

    /// Reads the two files written by [`write_phase_csv`](Self::write_phase_csv)
    /// and [`write_amplitude_csv`](Self::write_amplitude_csv).
    pub fn read_csv(phase_path: &Path, amplitude_path: &Path) -> Result<Self> {
        let (dims, phase) = read_table(phase_path, "phase", 1)?;
        let (dims_a, amplitude) = read_table(amplitude_path, "amplitude", 2)?;
        if dims != dims_a {
            return Err(Error::Format(format!("pool headers disagree: {dims:?} vs {dims_a:?}")));
        }
        let pools = Self::from_arrays(phase, amplitude, dims.1)?;
        if (pools.cycle_length, pools.lookback) != (dims.0, dims.2) {
            return Err(Error::Format(format!("{}: row/column count does not match header", phase_path.display())));
        }
        Ok(pools)
    }
}

fn write_table(
    path: &Path,
    kind: &str,
    pools: &EmbeddingPools,
    tags: &[&str],
    tag_values: impl Fn(usize) -> Vec<usize>,
    values: &Array2,
) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "# {kind} L={} C={} T={}", pools.cycle_length, pools.channels, pools.lookback).map_err(io)?;
    let cols: Vec<String> = (0..values.cols()).map(|t| format!("t{t}")).collect();
    writeln!(w, "{},{}", tags.join(","), cols.join(",")).map_err(io)?;
    for r in 0..values.rows() {
        let tv: Vec<String> = tag_values(r).iter().map(usize::to_string).collect();
        write!(w, "{}", tv.join(",")).map_err(io)?;
        for v in values.row(r) {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_table(path: &Path, kind: &str, tags: usize) -> Result<((usize, usize, usize), Array2)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let next = |lines: &mut std::io::Lines<BufReader<std::fs::File>>| -> Result<Option<String>> {
        lines.next().transpose().map_err(|e| Error::io(path, e))
    };
    let head = next(&mut lines)?.ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
    let dims = parse_header(&head, kind).ok_or_else(|| Error::Parse {
        line: 1,
        column: None,
        message: format!("expected `# {kind} L=.. C=.. T=..`, got `{head}`"),
    })?;
    let _columns = next(&mut lines)?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut line_no = 2;
    while let Some(line) = next(&mut lines)? {
        line_no += 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != tags + dims.2 {
            return Err(Error::Parse {
                line: line_no,
                column: None,
                message: format!("expected {} fields, found {}", tags + dims.2, fields.len()),
            });
        }
        for (j, f) in fields[tags..].iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                column: Some(tags + j + 1),
                message: format!("non-numeric value `{f}`"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok((dims, Array2::new(rows, dims.2, data)))
}

fn parse_header(line: &str, kind: &str) -> Option<(usize, usize, usize)> {
    let mut parts = line.strip_prefix('#')?.split_whitespace();
    if parts.next()? != kind {
        return None;
    }
    let mut field = |key: &str| parts.next()?.strip_prefix(key)?.parse::<usize>().ok();
    Some((field("L=")?, field("C=")?, field("T=")?))
}
