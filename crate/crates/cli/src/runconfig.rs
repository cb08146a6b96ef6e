//! Run configuration: a flat `key = value` file layered over built-in
//! defaults, with command-line overrides on top.

use std::path::{Path, PathBuf};

use pamod::config::KeyValues;
use pamod::dataio::{generate_synthetic, load_csv, SeriesDataset, SplitRule, SynthSpec};
use pamod::evalbench::Prepared;
use pamod::model::ModulationVariant;
use pamod::train::{LossKind, TrainConfig};
use pamod::{Error, Result};

pub const KEYS: &[&str] = &[
    "data",
    "synth_spec",
    "split",
    "cycle_length",
    "lookback",
    "horizon",
    "lr",
    "alpha",
    "epochs",
    "patience",
    "batch",
    "dropout",
    "d",
    "eps_norm",
    "seed",
    "variant",
    "loss",
    "variants",
    "cycles",
    "lookbacks",
    "out_dir",
    "workers",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Benchmark CSV; relative paths resolve against the config file's directory.
    pub data: Option<PathBuf>,
    /// Synthetic spec used instead of `data`.
    pub synth_spec: Option<PathBuf>,
    pub split: SplitRule,
    /// Required with `data`; defaults to the spec's L with `synth_spec`.
    pub cycle_length: Option<usize>,
    pub train: TrainConfig,
    pub variants: Vec<ModulationVariant>,
    pub cycles: Vec<usize>,
    pub lookbacks: Vec<usize>,
    pub out_dir: PathBuf,
    pub workers: usize,
}

fn list<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<Option<Vec<T>>>
where
    T::Err: std::fmt::Display,
{
    let Some(raw) = kv.raw(key) else { return Ok(None) };
    raw.split(',')
        .map(|s| {
            s.trim().parse::<T>().map_err(|e| Error::Parse {
                line: kv.line_of(key).unwrap_or(0),
                column: None,
                message: format!("invalid entry `{}` in `{key}`: {e}", s.trim()),
            })
        })
        .collect::<Result<Vec<T>>>()
        .map(Some)
}

impl RunConfig {
    /// Builds a config from parsed keys. `base` anchors relative paths read
    /// from a file; overrides carry line 0 and resolve against the working
    /// directory.
    pub fn from_keys(kv: &KeyValues, base: &Path) -> Result<Self> {
        kv.check_known(KEYS)?;
        let path = |key: &str| {
            kv.raw(key).map(|v| {
                let p = PathBuf::from(v);
                if p.is_relative() && kv.line_of(key) != Some(0) {
                    base.join(p)
                } else {
                    p
                }
            })
        };
        let d = TrainConfig::default();
        let train = TrainConfig {
            lookback: kv.get_or("lookback", d.lookback)?,
            horizon: kv.get_or("horizon", d.horizon)?,
            lr: kv.get_or("lr", d.lr)?,
            alpha: kv.get_or("alpha", d.alpha)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            patience: kv.get_or("patience", d.patience)?,
            batch: kv.get_or("batch", d.batch)?,
            dropout: kv.get_or("dropout", d.dropout)?,
            head: kv.get_or("d", d.head)?,
            eps_norm: kv.get_or("eps_norm", d.eps_norm)?,
            seed: kv.get_or("seed", d.seed)?,
            variant: kv.get_or("variant", d.variant)?,
            loss_kind: kv.get_or("loss", LossKind::Hybrid)?,
        };
        train.validate()?;
        let cfg = RunConfig {
            data: path("data"),
            synth_spec: path("synth_spec"),
            split: kv.get_or("split", SplitRule::Ratio622)?,
            cycle_length: kv.get("cycle_length")?,
            variants: list(kv, "variants")?.unwrap_or_else(|| {
                vec![ModulationVariant::Full, ModulationVariant::None, ModulationVariant::NoAmplitude, ModulationVariant::NoPhase]
            }),
            cycles: list(kv, "cycles")?.unwrap_or_default(),
            lookbacks: list(kv, "lookbacks")?.unwrap_or_default(),
            out_dir: path("out_dir").unwrap_or_else(|| PathBuf::from("runs")),
            workers: kv.get_or("workers", 1)?,
            train,
        };
        if cfg.data.is_some() && cfg.synth_spec.is_some() {
            return Err(Error::Config("set only one of `data` and `synth_spec`".into()));
        }
        if cfg.cycle_length == Some(0) || cfg.cycles.contains(&0) || cfg.lookbacks.contains(&0) {
            return Err(Error::Config("cycle lengths and lookbacks must be at least 1".into()));
        }
        if cfg.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(cfg)
    }

    /// Reads `path` (if any), applies `overrides` on top, and builds the config.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let (mut kv, base) = match path {
            Some(p) => (KeyValues::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
            None => (KeyValues::default(), PathBuf::new()),
        };
        for (k, v) in overrides {
            kv.set(k, v.clone());
        }
        Self::from_keys(&kv, &base)
    }

    /// Loads the dataset named by the config and standardizes it on its
    /// train rows.
    pub fn prepare(&self) -> Result<Prepared> {
        let raw = self.dataset()?;
        Ok(Prepared::new(&raw))
    }

    fn dataset(&self) -> Result<SeriesDataset> {
        if let Some(spec_path) = &self.synth_spec {
            let spec = SynthSpec::load(spec_path)?;
            let ds = generate_synthetic(&spec)?;
            return match self.cycle_length {
                Some(l) => ds.with_cycle_length(l),
                None => Ok(ds),
            };
        }
        let Some(path) = &self.data else {
            return Err(Error::Config("no dataset: set `data` or `synth_spec`".into()));
        };
        if !path.is_file() {
            return Err(Error::Config(format!("dataset file {} does not exist", path.display())));
        }
        let l = self
            .cycle_length
            .ok_or_else(|| Error::Config("`cycle_length` is required with `data`".into()))?;
        load_csv(path, l, self.split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_a_file() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.out_dir, PathBuf::from("runs"));
        assert_eq!(cfg.variants.len(), 4);
    }

    #[test]
    fn override_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.cfg");
        std::fs::write(&p, "seed = 1\nlr = 0.01\ndata = x.csv\ncycles = 12, 24\n").unwrap();
        let cfg = RunConfig::load(Some(&p), &[("seed".into(), "3".into())]).unwrap();
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.alpha, 0.2);
        assert_eq!(cfg.data, Some(dir.path().join("x.csv")));
        assert_eq!(cfg.cycles, vec![12, 24]);
    }

    #[test]
    fn bad_values_name_the_line() {
        let kv = KeyValues::parse("lr = 0.1\nvariants = full, nope\n").unwrap();
        let err = RunConfig::from_keys(&kv, Path::new("")).unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
        let kv = KeyValues::parse("learning_rate = 0.1\n").unwrap();
        assert!(RunConfig::from_keys(&kv, Path::new("")).unwrap_err().to_string().contains("unknown key"));
    }

    #[test]
    fn missing_data_names_the_path() {
        let cfg = RunConfig::load(None, &[("data".into(), "/no/such.csv".into()), ("cycle_length".into(), "24".into())])
            .unwrap();
        assert!(cfg.prepare().unwrap_err().to_string().contains("/no/such.csv"));
    }
}
