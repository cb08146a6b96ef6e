//! `pamod` command-line entry point.
//!
//! Settings come from `--config FILE` (flat `key = value`), then `--set
//! key=value`, `--seed` and `--out` override them. Exit status is 0 on
//! success, 1 when a run fails, 2 for usage and configuration errors.

mod runconfig;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use pamod::checkpoint;
use pamod::dataio::{generate_synthetic, SynthSpec};
use pamod::evalbench::{
    config_hash, evaluate, export_dumps, run_ablation, run_one, sweep_cycle, sweep_lookback, write_reports,
    MetricReport, Prepared, REPORT_HEADER,
};
use pamod::model::{ModelParams, ModulationVariant};
use pamod::train::gradcheck_toy;

use runconfig::RunConfig;

#[derive(Parser)]
#[command(name = "pamod", version, about = "Phase-amplitude modulated forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run config file (`key = value` per line).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes best.ckpt, train.log and report.csv.
    Train(Common),
    /// Test-split metrics of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/best.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every entry of `variants` under one seed.
    Ablate(Common),
    /// Train once per entry of `cycles`.
    SweepCycle(Common),
    /// Train once per entry of `lookbacks`.
    SweepLookback(Common),
    /// Generate a synthetic dataset CSV from a spec file.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Defaults to the config's `synth_spec`.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Finite-difference check of the training gradients on a toy model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// One variant instead of all of them.
        #[arg(long)]
        variant: Option<ModulationVariant>,
    },
    /// Export pools and test predictions of a checkpoint as CSV.
    Dump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome = std::result::Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

impl Common {
    fn load(&self) -> std::result::Result<RunConfig, Failure> {
        let mut overrides = Vec::new();
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| usage(anyhow!("--set expects KEY=VALUE, got `{s}`")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        let mut cfg = RunConfig::load(self.config.as_deref(), &overrides).map_err(|e| match &self.config {
            Some(p) => usage(anyhow!("{}: {e}", p.display())),
            None => usage(e),
        })?;
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn create_out(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(runtime)
}

fn print_reports(reports: &[MetricReport]) {
    println!("{REPORT_HEADER}");
    for r in reports {
        println!("{}", r.csv_row());
    }
}

fn save_reports(path: &Path, reports: &[MetricReport]) -> Outcome {
    write_reports(path, reports).map_err(runtime)?;
    print_reports(reports);
    Ok(())
}

fn cmd_train(common: &Common) -> Outcome {
    let cfg = common.load()?;
    let prep = cfg.prepare().map_err(usage)?;
    create_out(&cfg.out_dir)?;
    let log_path = cfg.out_dir.join("train.log");
    let mut log = std::fs::File::create(&log_path).with_context(|| log_path.display().to_string()).map_err(runtime)?;
    writeln!(log, "epoch,train_loss,val_loss,seconds").map_err(runtime)?;
    let mut log_err = None;
    let (report, outcome) = run_one(&prep, &cfg.train, |e| {
        eprintln!("epoch {} train {:.6} val {:.6} ({:.1}s)", e.epoch, e.train_loss, e.val_loss, e.seconds);
        if let Err(err) = writeln!(log, "{}", e.log_line()) {
            log_err.get_or_insert(err);
        }
    })
    .map_err(runtime)?;
    if let Some(err) = log_err {
        return Err(runtime(anyhow!("{}: {err}", log_path.display())));
    }
    checkpoint::save(&outcome.params, &cfg.out_dir.join("best.ckpt")).map_err(runtime)?;
    eprintln!("best epoch {}", outcome.best_epoch);
    save_reports(&cfg.out_dir.join("report.csv"), &[report])
}

fn load_checkpoint(cfg: &RunConfig, prep: &Prepared, path: Option<&PathBuf>) -> std::result::Result<ModelParams, Failure> {
    let path = path.cloned().unwrap_or_else(|| cfg.out_dir.join("best.ckpt"));
    let params = checkpoint::load(&path).map_err(usage)?;
    let expected = cfg.train.hyper(prep.data.channels(), prep.data.cycle_length()).map_err(usage)?;
    checkpoint::check_compatible(&expected, &params.hyper).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    Ok(params)
}

fn cmd_eval(common: &Common, ckpt: Option<&PathBuf>) -> Outcome {
    let cfg = common.load()?;
    let prep = cfg.prepare().map_err(usage)?;
    let params = load_checkpoint(&cfg, &prep, ckpt)?;
    let start = Instant::now();
    let (mse, mae, mse_orig, mae_orig, per_horizon) = evaluate(&params, &prep, cfg.train.eps_norm).map_err(runtime)?;
    let report = MetricReport {
        dataset: prep.data.name.clone(),
        variant: cfg.train.variant,
        lookback: cfg.train.lookback,
        horizon: Some(cfg.train.horizon),
        cycle_length: prep.data.cycle_length(),
        seed: cfg.train.seed,
        mse,
        mae,
        mse_orig,
        mae_orig,
        per_horizon,
        seconds: start.elapsed().as_secs_f64(),
        params: params.param_count().active,
        config_hash: config_hash(&prep.data, &cfg.train),
        best_epoch: 0,
    };
    create_out(&cfg.out_dir)?;
    save_reports(&cfg.out_dir.join("eval.csv"), &[report])
}

fn cmd_ablate(common: &Common) -> Outcome {
    let cfg = common.load()?;
    let prep = cfg.prepare().map_err(usage)?;
    create_out(&cfg.out_dir)?;
    let reports = run_ablation(&prep, &cfg.train, &cfg.variants, cfg.workers).map_err(runtime)?;
    save_reports(&cfg.out_dir.join("ablation.csv"), &reports)
}

fn cmd_sweep_cycle(common: &Common) -> Outcome {
    let cfg = common.load()?;
    let prep = cfg.prepare().map_err(usage)?;
    if cfg.cycles.is_empty() {
        return Err(usage(anyhow!("sweep-cycle needs `cycles`, e.g. --set cycles=12,24")));
    }
    create_out(&cfg.out_dir)?;
    let reports = sweep_cycle(&prep, &cfg.train, &cfg.cycles, cfg.workers).map_err(runtime)?;
    save_reports(&cfg.out_dir.join("sweep_cycle.csv"), &reports)
}

fn cmd_sweep_lookback(common: &Common) -> Outcome {
    let cfg = common.load()?;
    let prep = cfg.prepare().map_err(usage)?;
    if cfg.lookbacks.is_empty() {
        return Err(usage(anyhow!("sweep-lookback needs `lookbacks`, e.g. --set lookbacks=48,96")));
    }
    create_out(&cfg.out_dir)?;
    let reports = sweep_lookback(&prep, &cfg.train, &cfg.lookbacks, cfg.workers).map_err(runtime)?;
    save_reports(&cfg.out_dir.join("sweep_lookback.csv"), &reports)
}

fn cmd_synth(common: &Common, spec: Option<&PathBuf>) -> Outcome {
    let cfg = common.load()?;
    let path = spec
        .or(cfg.synth_spec.as_ref())
        .ok_or_else(|| usage(anyhow!("synth needs --spec or a config with `synth_spec`")))?;
    let mut spec = SynthSpec::load(path).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let ds = generate_synthetic(&spec).map_err(runtime)?;
    create_out(&cfg.out_dir)?;
    let out = cfg.out_dir.join(format!("{}.csv", spec.name));
    ds.write_csv(&out).map_err(runtime)?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_gradcheck(common: &Common, variant: Option<ModulationVariant>) -> Outcome {
    let cfg = common.load()?;
    let variants = variant.map_or_else(|| ModulationVariant::ALL.to_vec(), |v| vec![v]);
    let mut worst: f64 = 0.0;
    println!("variant,max_rel_error,checked");
    for v in variants {
        let r = gradcheck_toy(v, cfg.train.seed).map_err(runtime)?;
        println!("{v},{:.3e},{}", r.max_rel_error, r.checked);
        worst = worst.max(r.max_rel_error);
    }
    if worst < 1e-4 {
        Ok(())
    } else {
        Err(runtime(anyhow!("max relative error {worst:.3e} is not below 1e-4")))
    }
}

fn cmd_dump(common: &Common, ckpt: Option<&PathBuf>) -> Outcome {
    let cfg = common.load()?;
    let prep = cfg.prepare().map_err(usage)?;
    let params = load_checkpoint(&cfg, &prep, ckpt)?;
    export_dumps(&params, &prep, cfg.train.eps_norm, &cfg.out_dir).map_err(runtime)?;
    println!("{}", cfg.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint.as_ref()),
        Command::Ablate(c) => cmd_ablate(c),
        Command::SweepCycle(c) => cmd_sweep_cycle(c),
        Command::SweepLookback(c) => cmd_sweep_lookback(c),
        Command::Synth { common, spec } => cmd_synth(common, spec.as_ref()),
        Command::Gradcheck { common, variant } => cmd_gradcheck(common, *variant),
        Command::Dump { common, checkpoint } => cmd_dump(common, checkpoint.as_ref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
