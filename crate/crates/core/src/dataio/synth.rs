use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{SeriesDataset, SplitRule};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::ndmath::Array2;

/// Cycle-invariant latent process `Z_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseProcess {
    IidGaussian,
    /// Stationary unit-variance AR(1): `Z_t = ρ Z_{t-1} + sqrt(1-ρ²) ε_t`.
    Ar1 { rho: f64 },
}

/// Per-channel sinusoidal profile over one cycle:
/// `offset + amplitude * sin(2π τ / L + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
}

impl Profile {
    pub fn at(&self, tau: usize, cycle_length: usize) -> f64 {
        self.offset + self.amplitude * (2.0 * PI * tau as f64 / cycle_length as f64 + self.phase).sin()
    }

    /// `L x C` table from one profile per channel.
    pub fn table(profiles: &[Profile], cycle_length: usize) -> Array2 {
        Array2::from_fn(cycle_length, profiles.len(), |tau, c| profiles[c].at(tau, cycle_length))
    }
}

/// Location-scale generator `X_t = μ(t mod L) + σ(t mod L) ⊙ Z_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub name: String,
    pub channels: usize,
    pub steps: usize,
    pub cycle_length: usize,
    /// `L x C` mean offsets.
    pub mu: Array2,
    /// `L x C` positive scales.
    pub sigma: Array2,
    pub base: BaseProcess,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (l, c) = (self.cycle_length, self.channels);
        if l == 0 || c == 0 || self.steps == 0 {
            return Err(Error::config("C, N and L must be at least 1"));
        }
        for (name, t) in [("mu", &self.mu), ("sigma", &self.sigma)] {
            if t.shape() != (l, c) {
                return Err(Error::config(format!("{name} profile is {:?}, expected {l}x{c}", t.shape())));
            }
        }
        if let Some(bad) = self.sigma.data().iter().find(|s| !(**s > 0.0)) {
            return Err(Error::config(format!("sigma profile entries must be > 0, found {bad}")));
        }
        if let BaseProcess::Ar1 { rho } = self.base {
            if !(rho.abs() < 1.0) {
                return Err(Error::config(format!("ar1 rho must satisfy |rho| < 1, got {rho}")));
            }
        }
        Ok(())
    }

    /// Parses the flat key-value spec format.
    ///
    /// Keys: `C`, `N`, `L`, `base_process` (`iid_gaussian` | `ar1`), `rho`,
    /// `seed`, optional `name`, and the `mu` / `sigma` profiles. A profile is
    /// either whitespace-separated `sine:amplitude,phase[,offset]` terms (one
    /// per channel, or a single term shared by all channels) or an inline
    /// `L x C` block with rows separated by `;` and values by `,`.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.check_known(&["name", "C", "N", "L", "base_process", "rho", "seed", "mu", "sigma"])?;
        let channels: usize = kv.require("C")?;
        let steps: usize = kv.require("N")?;
        let cycle_length: usize = kv.require("L")?;
        let base = match kv.raw("base_process").unwrap_or("iid_gaussian") {
            "iid_gaussian" => BaseProcess::IidGaussian,
            "ar1" => BaseProcess::Ar1 { rho: kv.require("rho")? },
            other => {
                return Err(Error::Parse {
                    line: kv.line_of("base_process").unwrap_or(0),
                    column: None,
                    message: format!("unknown base_process `{other}`"),
                })
            }
        };
        let profile = |key: &str, default_offset: f64| -> Result<Array2> {
            let raw = kv.raw(key).ok_or_else(|| Error::config(format!("missing required key `{key}`")))?;
            parse_profile(raw, channels, cycle_length, default_offset).map_err(|message| Error::Parse {
                line: kv.line_of(key).unwrap_or(0),
                column: None,
                message: format!("{key}: {message}"),
            })
        };
        let spec = SynthSpec {
            name: kv.raw("name").unwrap_or("synthetic").to_string(),
            channels,
            steps,
            cycle_length,
            mu: profile("mu", 0.0)?,
            sigma: profile("sigma", 1.0)?,
            base,
            seed: kv.get_or("seed", 0)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn parse_profile(raw: &str, channels: usize, l: usize, default_offset: f64) -> std::result::Result<Array2, String> {
    let raw = raw.trim();
    if raw.starts_with("sine:") {
        let terms: Vec<Profile> = raw
            .split_whitespace()
            .map(|t| {
                let body = t.strip_prefix("sine:").ok_or_else(|| format!("expected `sine:` term, got `{t}`"))?;
                let nums = body
                    .split(',')
                    .map(|v| v.parse::<f64>().map_err(|_| format!("bad number `{v}` in `{t}`")))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                match nums.as_slice() {
                    [a, p] => Ok(Profile { amplitude: *a, phase: *p, offset: default_offset }),
                    [a, p, o] => Ok(Profile { amplitude: *a, phase: *p, offset: *o }),
                    _ => Err(format!("`{t}` needs amplitude,phase[,offset]")),
                }
            })
            .collect::<std::result::Result<_, _>>()?;
        let per_channel = match terms.len() {
            1 => vec![terms[0]; channels],
            n if n == channels => terms,
            n => return Err(format!("{n} sine terms for {channels} channels")),
        };
        return Ok(Profile::table(&per_channel, l));
    }
    let rows: Vec<Vec<f64>> = raw
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad number `{}`", v.trim())))
                .collect()
        })
        .collect::<std::result::Result<_, _>>()?;
    if rows.len() != l || rows.iter().any(|r| r.len() != channels) {
        return Err(format!("inline block must be {l} rows of {channels} values"));
    }
    Ok(Array2::from_rows(&rows))
}

/// Draws a dataset from `spec`, with a 7:1:2 chronological split.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SeriesDataset> {
    spec.validate()?;
    let (n, c, l) = (spec.steps, spec.channels, spec.cycle_length);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut z = vec![0.0; c];
    let mut data = Vec::with_capacity(n * c);
    for t in 0..n {
        let tau = t % l;
        for (ch, zc) in z.iter_mut().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *zc = match spec.base {
                BaseProcess::Ar1 { rho } if t > 0 => rho * *zc + (1.0 - rho * rho).sqrt() * eps,
                _ => eps,
            };
            data.push(spec.mu.get(tau, ch) + spec.sigma.get(tau, ch) * *zc);
        }
    }
    let columns = (0..c).map(|i| format!("ch{i}")).collect();
    SeriesDataset::new(spec.name.clone(), columns, Array2::new(n, c, data), l, SplitRule::Ratio712)
}
