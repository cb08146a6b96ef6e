//! Metrics, benchmark / ablation / sweep runners, and dump export.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::dataio::{SeriesDataset, Split, StandardScaler};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModulationVariant};
use crate::ndmath::Array2;
use crate::train::{predict_split, train_model_with, EpochRecord, TrainConfig, TrainOutcome};

/// `(mse, mae)` over every entry.
pub fn metrics(pred: &Array2, truth: &Array2) -> Result<(f64, f64)> {
    if pred.shape() != truth.shape() {
        return Err(Error::config(format!(
            "prediction is {}x{} but target is {}x{}",
            pred.rows(),
            pred.cols(),
            truth.rows(),
            truth.cols()
        )));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in pred.data().iter().zip(truth.data()) {
        let e = p - t;
        se += e * e;
        ae += e.abs();
    }
    Ok((se / n, ae / n))
}

/// `(mse, mae)` per horizon step.
pub fn per_horizon(pred: &Array2, truth: &Array2) -> Result<Vec<(f64, f64)>> {
    metrics(pred, truth)?;
    let n = pred.rows() as f64;
    Ok((0..pred.cols())
        .map(|k| {
            let (mut se, mut ae) = (0.0, 0.0);
            for r in 0..pred.rows() {
                let e = pred.get(r, k) - truth.get(r, k);
                se += e * e;
                ae += e.abs();
            }
            (se / n, ae / n)
        })
        .collect())
}

/// A globally standardized dataset and the scaler that produced it.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: SeriesDataset,
    pub scaler: StandardScaler,
}

impl Prepared {
    /// Fits the scaler on the train rows of `raw` and applies it to all rows.
    pub fn new(raw: &SeriesDataset) -> Self {
        let scaler = StandardScaler::fit(raw);
        Self { data: scaler.apply(raw), scaler }
    }

    pub fn with_cycle_length(&self, l: usize) -> Result<Self> {
        Ok(Self { data: self.data.with_cycle_length(l)?, scaler: self.scaler.clone() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub dataset: String,
    pub variant: ModulationVariant,
    pub lookback: usize,
    /// `None` for a horizon-averaged row.
    pub horizon: Option<usize>,
    pub cycle_length: usize,
    pub seed: u64,
    /// On globally standardized data.
    pub mse: f64,
    pub mae: f64,
    /// In original units.
    pub mse_orig: f64,
    pub mae_orig: f64,
    pub per_horizon: Vec<(f64, f64)>,
    pub seconds: f64,
    /// Parameters read by the variant.
    pub params: usize,
    pub config_hash: String,
    pub best_epoch: usize,
}

pub const REPORT_HEADER: &str = "dataset,variant,T,H,L,seed,mse,mae,seconds,params,config_hash,mse_orig,mae_orig";

impl MetricReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.2},{},{},{:.6},{:.6}",
            self.dataset,
            self.variant,
            self.lookback,
            self.horizon.map_or_else(|| "avg".to_string(), |h| h.to_string()),
            self.cycle_length,
            self.seed,
            self.mse,
            self.mae,
            self.seconds,
            self.params,
            self.config_hash,
            self.mse_orig,
            self.mae_orig
        )
    }

    /// The row without its wall-clock field, for reproducibility checks.
    pub fn csv_row_without_time(&self) -> String {
        let mut fields: Vec<String> = self.csv_row().split(',').map(str::to_string).collect();
        fields.remove(8);
        fields.join(",")
    }
}

pub fn write_reports(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{REPORT_HEADER}").map_err(io)?;
    for r in reports {
        writeln!(w, "{}", r.csv_row()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Short hex digest identifying the dataset and every training setting.
pub fn config_hash(ds: &SeriesDataset, cfg: &TrainConfig) -> String {
    let mut h = Sha256::new();
    let (tr, va) = ds.split_bounds();
    h.update(format!("{}|{}x{}|L={}|{tr},{va}|{cfg:?}", ds.name, ds.steps(), ds.channels(), ds.cycle_length()).as_bytes());
    // the data itself, so a changed file changes the hash
    for v in ds.values().data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Test-split evaluation of trained parameters.
pub fn evaluate(params: &ModelParams, prep: &Prepared, eps_norm: f64) -> Result<(f64, f64, f64, f64, Vec<(f64, f64)>)> {
    let (pred, truth) = predict_split(params, &prep.data, Split::Test, eps_norm)?;
    let (mse, mae) = metrics(&pred, &truth)?;
    let ph = per_horizon(&pred, &truth)?;
    let (mse_o, mae_o) =
        metrics(&prep.scaler.inverse_channel_rows(&pred), &prep.scaler.inverse_channel_rows(&truth))?;
    Ok((mse, mae, mse_o, mae_o, ph))
}

/// Trains one model and reports its test metrics.
pub fn run_one(
    prep: &Prepared,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(MetricReport, TrainOutcome)> {
    let start = Instant::now();
    let outcome = train_model_with(&prep.data, cfg, on_epoch)?;
    let (mse, mae, mse_orig, mae_orig, per_horizon) = evaluate(&outcome.params, prep, cfg.eps_norm)?;
    let report = MetricReport {
        dataset: prep.data.name.clone(),
        variant: cfg.variant,
        lookback: cfg.lookback,
        horizon: Some(cfg.horizon),
        cycle_length: prep.data.cycle_length(),
        seed: cfg.seed,
        mse,
        mae,
        mse_orig,
        mae_orig,
        per_horizon,
        seconds: start.elapsed().as_secs_f64(),
        params: outcome.params.param_count().active,
        config_hash: config_hash(&prep.data, cfg),
        best_epoch: outcome.best_epoch,
    };
    Ok((report, outcome))
}

/// Runs `jobs` on up to `workers` threads; results keep job order.
fn run_jobs(
    jobs: Vec<(Prepared, TrainConfig)>,
    workers: usize,
) -> Result<Vec<MetricReport>> {
    let workers = workers.max(1).min(jobs.len().max(1));
    if workers == 1 {
        return jobs.iter().map(|(p, c)| run_one(p, c, |_| {}).map(|r| r.0)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<MetricReport>>>> = jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some((p, c)) = jobs.get(i) else { break };
                let r = run_one(p, c, |_| {}).map(|r| r.0);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every job ran")).collect()
}

/// Mean of the per-horizon rows as an extra `H = avg` row.
pub fn average_row(reports: &[MetricReport]) -> Option<MetricReport> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(MetricReport {
        horizon: None,
        mse: mean(|r| r.mse),
        mae: mean(|r| r.mae),
        mse_orig: mean(|r| r.mse_orig),
        mae_orig: mean(|r| r.mae_orig),
        per_horizon: Vec::new(),
        seconds: reports.iter().map(|r| r.seconds).sum(),
        params: reports.iter().map(|r| r.params).max().unwrap_or(0),
        ..first.clone()
    })
}

/// One model per horizon plus the horizon-averaged row.
pub fn run_benchmark(prep: &Prepared, cfg: &TrainConfig, horizons: &[usize], workers: usize) -> Result<Vec<MetricReport>> {
    let jobs = horizons.iter().map(|&h| (prep.clone(), TrainConfig { horizon: h, ..cfg.clone() })).collect();
    let mut reports = run_jobs(jobs, workers)?;
    if let Some(avg) = average_row(&reports) {
        reports.push(avg);
    }
    Ok(reports)
}

/// One model per variant, identical seed and settings otherwise.
pub fn run_ablation(
    prep: &Prepared,
    cfg: &TrainConfig,
    variants: &[ModulationVariant],
    workers: usize,
) -> Result<Vec<MetricReport>> {
    let jobs = variants.iter().map(|&v| (prep.clone(), TrainConfig { variant: v, ..cfg.clone() })).collect();
    run_jobs(jobs, workers)
}

pub fn sweep_cycle(prep: &Prepared, cfg: &TrainConfig, cycle_lengths: &[usize], workers: usize) -> Result<Vec<MetricReport>> {
    let jobs = cycle_lengths
        .iter()
        .map(|&l| Ok((prep.with_cycle_length(l)?, cfg.clone())))
        .collect::<Result<Vec<_>>>()?;
    run_jobs(jobs, workers)
}

pub fn sweep_lookback(prep: &Prepared, cfg: &TrainConfig, lookbacks: &[usize], workers: usize) -> Result<Vec<MetricReport>> {
    let jobs = lookbacks.iter().map(|&t| (prep.clone(), TrainConfig { lookback: t, ..cfg.clone() })).collect();
    run_jobs(jobs, workers)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct SeedSummary {
    pub reports: Vec<MetricReport>,
    pub mse: (f64, f64),
    pub mae: (f64, f64),
}

/// Repeats one configuration over `seeds`; the error-bar protocol uses 0..5.
pub fn run_seeds(prep: &Prepared, cfg: &TrainConfig, seeds: &[u64], workers: usize) -> Result<SeedSummary> {
    let jobs = seeds.iter().map(|&s| (prep.clone(), TrainConfig { seed: s, ..cfg.clone() })).collect();
    let reports = run_jobs(jobs, workers)?;
    let mse = mean_std(&reports.iter().map(|r| r.mse).collect::<Vec<_>>());
    let mae = mean_std(&reports.iter().map(|r| r.mae).collect::<Vec<_>>());
    Ok(SeedSummary { reports, mse, mae })
}

/// Writes `phase_pool.csv`, `amplitude_pool.csv` and `predictions.csv`
/// (`window,channel,step,prediction,truth`, 9 significant digits) into
/// `out_dir`.
pub fn export_dumps(params: &ModelParams, prep: &Prepared, eps_norm: f64, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    params.pools.write_phase_csv(&out_dir.join("phase_pool.csv"))?;
    params.pools.write_amplitude_csv(&out_dir.join("amplitude_pool.csv"))?;
    let (pred, truth) = predict_split(params, &prep.data, Split::Test, eps_norm)?;
    let path = out_dir.join("predictions.csv");
    let io = |e| Error::io(&path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io)?);
    writeln!(w, "window,channel,step,prediction,truth").map_err(io)?;
    let c = prep.data.channels();
    for r in 0..pred.rows() {
        for k in 0..pred.cols() {
            writeln!(w, "{},{},{k},{:.8e},{:.8e}", r / c, r % c, pred.get(r, k), truth.get(r, k)).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
