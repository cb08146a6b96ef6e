//! The forecaster: modulation block, residual fusion and MLP head.
//!
//! All linear maps act on the time / hidden axis and are shared by every
//! channel. A batch of `B` windows is processed as a `B·C x T` matrix whose
//! row `b·C + c` is channel `c` of window `b`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::cyclemb::{init_pools, xavier_std, EmbeddingPools};
use crate::error::{Error, Result};
use crate::ndmath::{Array2, Mode, Tape, Var, GELU_LIPSCHITZ};
use crate::revin::{denormalize, normalize};

/// How the cyclical embeddings enter the modulation block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModulationVariant {
    Full,
    /// Additive phase term dropped.
    NoPhase,
    /// Multiplicative amplitude term replaced by ones.
    NoAmplitude,
    /// One shared `L x T` table (the phase pool storage) feeds both paths.
    Lrc,
    /// Fixed sinusoids with phase `2π·tau/L` replace both pools.
    SinTau,
    /// Phase pool drives the multiplicative path, amplitude pool the additive one.
    Swapped,
    /// No modulation block; the head sees the normalized input alone.
    None,
}

impl ModulationVariant {
    pub const ALL: [ModulationVariant; 7] = [
        ModulationVariant::Full,
        ModulationVariant::NoPhase,
        ModulationVariant::NoAmplitude,
        ModulationVariant::Lrc,
        ModulationVariant::SinTau,
        ModulationVariant::Swapped,
        ModulationVariant::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModulationVariant::Full => "full",
            ModulationVariant::NoPhase => "no_phase",
            ModulationVariant::NoAmplitude => "no_amplitude",
            ModulationVariant::Lrc => "lrc",
            ModulationVariant::SinTau => "sin_tau",
            ModulationVariant::Swapped => "swapped",
            ModulationVariant::None => "none",
        }
    }

    fn uses_phase_pool(self) -> bool {
        matches!(self, ModulationVariant::Full | ModulationVariant::NoAmplitude | ModulationVariant::Lrc | ModulationVariant::Swapped)
    }

    fn uses_amplitude_pool(self) -> bool {
        matches!(self, ModulationVariant::Full | ModulationVariant::NoPhase | ModulationVariant::Swapped)
    }
}

impl FromStr for ModulationVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|v| v.name()).collect();
                Error::config(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

impl fmt::Display for ModulationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture hyperparameters. `hidden` is always `4 · lookback`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub cycle_length: usize,
    pub hidden: usize,
    pub head: usize,
    pub dropout: f64,
    pub variant: ModulationVariant,
}

impl Hyper {
    pub fn new(
        lookback: usize,
        horizon: usize,
        channels: usize,
        cycle_length: usize,
        head: usize,
        dropout: f64,
        variant: ModulationVariant,
    ) -> Result<Self> {
        for (name, v) in [("lookback", lookback), ("horizon", horizon), ("channels", channels), ("cycle length", cycle_length), ("head width", head)] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        Ok(Self { lookback, horizon, channels, cycle_length, hidden: 4 * lookback, head, dropout, variant })
    }
}

/// Every trainable array plus the hyperparameters that shape them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: Hyper,
    /// `T x S`
    pub u1: Array2,
    pub u2: Array2,
    pub u3: Array2,
    /// `S x T`
    pub u4: Array2,
    /// `T x d`
    pub u5: Array2,
    /// `d x H`
    pub u6: Array2,
    pub b1: Array2,
    pub b2: Array2,
    pub b3: Array2,
    pub b4: Array2,
    pub b5: Array2,
    pub b6: Array2,
    pub pools: EmbeddingPools,
}

/// Array names in declaration order, as used by checkpoints and optimizers.
pub const PARAM_NAMES: [&str; 14] =
    ["u1", "u2", "u3", "u4", "u5", "u6", "b1", "b2", "b3", "b4", "b5", "b6", "phase_pool", "amplitude_pool"];
pub const PHASE_POOL: usize = 12;
pub const AMPLITUDE_POOL: usize = 13;

/// Parameter counts per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub maps: usize,
    pub biases: usize,
    pub phase_pool: usize,
    pub amplitude_pool: usize,
    pub total: usize,
    /// Parameters the configured variant actually reads.
    pub active: usize,
}

impl ModelParams {
    /// Xavier-normal maps and pools, zero biases.
    pub fn init<R: Rng + ?Sized>(hyper: Hyper, rng: &mut R) -> Self {
        let Hyper { lookback: t, horizon: h, channels: c, cycle_length: l, hidden: s, head: d, .. } = hyper;
        let mut map = |i, o| Array2::random_normal(i, o, xavier_std(i, o), rng);
        let (u1, u2, u3, u4, u5, u6) = (map(t, s), map(t, s), map(t, s), map(s, t), map(t, d), map(d, h));
        let pools = init_pools(l, c, t, rng);
        Self {
            hyper,
            u1,
            u2,
            u3,
            u4,
            u5,
            u6,
            b1: Array2::zeros(1, s),
            b2: Array2::zeros(1, s),
            b3: Array2::zeros(1, s),
            b4: Array2::zeros(1, t),
            b5: Array2::zeros(1, d),
            b6: Array2::zeros(1, h),
            pools,
        }
    }

    /// All-zero parameters of the right shapes.
    pub fn zeros(hyper: Hyper) -> Self {
        let Hyper { lookback: t, horizon: h, channels: c, cycle_length: l, hidden: s, head: d, .. } = hyper;
        Self {
            hyper,
            u1: Array2::zeros(t, s),
            u2: Array2::zeros(t, s),
            u3: Array2::zeros(t, s),
            u4: Array2::zeros(s, t),
            u5: Array2::zeros(t, d),
            u6: Array2::zeros(d, h),
            b1: Array2::zeros(1, s),
            b2: Array2::zeros(1, s),
            b3: Array2::zeros(1, s),
            b4: Array2::zeros(1, t),
            b5: Array2::zeros(1, d),
            b6: Array2::zeros(1, h),
            pools: EmbeddingPools::zeros(l, c, t),
        }
    }

    /// Rebuilds parameters from arrays in [`PARAM_NAMES`] order.
    pub fn from_arrays(hyper: Hyper, arrays: Vec<Array2>) -> Result<Self> {
        let shell = Self::zeros(hyper);
        if arrays.len() != PARAM_NAMES.len() {
            return Err(Error::Format(format!("expected {} arrays, found {}", PARAM_NAMES.len(), arrays.len())));
        }
        for ((name, want), got) in PARAM_NAMES.iter().zip(shell.arrays()).zip(&arrays) {
            if want.shape() != got.shape() {
                return Err(Error::Format(format!(
                    "array `{name}` is {}x{}, expected {}x{}",
                    got.rows(),
                    got.cols(),
                    want.rows(),
                    want.cols()
                )));
            }
        }
        let mut it = arrays.into_iter();
        let mut next = || it.next().unwrap();
        let (u1, u2, u3, u4, u5, u6) = (next(), next(), next(), next(), next(), next());
        let (b1, b2, b3, b4, b5, b6) = (next(), next(), next(), next(), next(), next());
        let pools = EmbeddingPools::from_arrays(next(), next(), hyper.channels)?;
        Ok(Self { hyper, u1, u2, u3, u4, u5, u6, b1, b2, b3, b4, b5, b6, pools })
    }

    pub fn arrays(&self) -> [&Array2; 14] {
        [
            &self.u1,
            &self.u2,
            &self.u3,
            &self.u4,
            &self.u5,
            &self.u6,
            &self.b1,
            &self.b2,
            &self.b3,
            &self.b4,
            &self.b5,
            &self.b6,
            &self.pools.phase,
            &self.pools.amplitude,
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut Array2; 14] {
        [
            &mut self.u1,
            &mut self.u2,
            &mut self.u3,
            &mut self.u4,
            &mut self.u5,
            &mut self.u6,
            &mut self.b1,
            &mut self.b2,
            &mut self.b3,
            &mut self.b4,
            &mut self.b5,
            &mut self.b6,
            &mut self.pools.phase,
            &mut self.pools.amplitude,
        ]
    }

    pub fn param_count(&self) -> ParamCount {
        let a = self.arrays();
        let maps = a[..6].iter().map(|x| x.len()).sum();
        let biases = a[6..12].iter().map(|x| x.len()).sum();
        let (phase_pool, amplitude_pool) = self.pools.param_count();
        let v = self.hyper.variant;
        let active = if v == ModulationVariant::None {
            a[4].len() + a[5].len() + a[10].len() + a[11].len()
        } else {
            maps + biases
                + if v.uses_phase_pool() { phase_pool } else { 0 }
                + if v.uses_amplitude_pool() { amplitude_pool } else { 0 }
        };
        ParamCount { maps, biases, phase_pool, amplitude_pool, total: maps + biases + phase_pool + amplitude_pool, active }
    }

    /// Lipschitz constant of `x_norm ↦ forward(x_norm)` for a fixed `tau` in
    /// eval mode, under the Frobenius norm:
    /// `‖U6‖·γ·‖U5‖·(1 + ‖U4‖·max|A|·‖U1‖)` with `γ` the GeLU slope bound.
    pub fn lipschitz_bound(&self, tau: usize) -> Result<f64> {
        let head = self.u6.spectral_norm() * GELU_LIPSCHITZ * self.u5.spectral_norm();
        let v = self.hyper.variant;
        if v == ModulationVariant::None {
            return Ok(head);
        }
        let a_max = if v == ModulationVariant::NoAmplitude {
            1.0
        } else {
            let c = self.hyper.channels;
            let x = Array2::zeros(c, self.hyper.lookback);
            let mut tape = Tape::new();
            let rec = record(&mut tape, self, x, &[tau], v, Mode::Eval, &mut rand::rngs::mock::StepRng::new(0, 0))?;
            tape.value(rec.amplitude.expect("variant has an amplitude path")).max_abs()
        };
        Ok(head * (1.0 + self.u4.spectral_norm() * a_max * self.u1.spectral_norm()))
    }
}

/// Handles into a recorded forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    /// Parameter leaves in [`PARAM_NAMES`] order.
    pub params: [Var; 14],
    pub input: Var,
    pub x1: Option<Var>,
    /// Multiplicative modulation `A`, `B·C x S`.
    pub amplitude: Option<Var>,
    /// Additive modulation `P`, `B·C x S`.
    pub phase: Option<Var>,
    pub x2: Option<Var>,
    pub x_mod: Option<Var>,
    pub output: Var,
}

fn check_stage(tape: &Tape, v: Var, stage: &str) -> Result<Var> {
    if tape.value(v).all_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { stage: stage.to_string() })
    }
}

/// Fixed sinusoid rows `sin(2π·t/T + 2π·tau/L)`, one per window.
pub fn sin_tau_rows(taus: &[usize], lookback: usize, cycle_length: usize) -> Array2 {
    use std::f64::consts::TAU;
    Array2::from_fn(taus.len(), lookback, |b, t| {
        (TAU * t as f64 / lookback as f64 + TAU * taus[b] as f64 / cycle_length as f64).sin()
    })
}

/// Records the batched forward pass of `variant` on `tape`.
///
/// `x_norm` is `B·C x T` with `B = taus.len()`.
pub fn record<'a, R: Rng + ?Sized>(
    tape: &mut Tape<'a>,
    params: &'a ModelParams,
    x_norm: Array2,
    taus: &[usize],
    variant: ModulationVariant,
    mode: Mode,
    rng: &mut R,
) -> Result<Recorded> {
    let hp = &params.hyper;
    let c = hp.channels;
    if x_norm.shape() != (taus.len() * c, hp.lookback) {
        return Err(Error::config(format!(
            "input is {}x{}, expected {}x{} for {} windows of {c} channels",
            x_norm.rows(),
            x_norm.cols(),
            taus.len() * c,
            hp.lookback,
            taus.len()
        )));
    }
    if let Some(&bad) = taus.iter().find(|&&t| t >= hp.cycle_length) {
        return Err(Error::config(format!("cycle index {bad} out of range for L = {}", hp.cycle_length)));
    }
    if !x_norm.all_finite() {
        return Err(Error::NonFinite { stage: "normalized input".into() });
    }
    let p: [Var; 14] = params.arrays().map(|a| tape.param(a));
    let [u1, u2, u3, u4, u5, u6, b1, b2, b3, b4, b5, b6, wm, wv] = p;
    let x = tape.constant(x_norm);
    // one row per window -> one row per (window, channel)
    let expand: Vec<usize> = (0..taus.len()).flat_map(|b| std::iter::repeat(b).take(c)).collect();
    let slab_rows: Vec<usize> = taus.iter().flat_map(|&t| t * c..(t + 1) * c).collect();

    let mut rec = Recorded { params: p, input: x, x1: None, amplitude: None, phase: None, x2: None, x_mod: None, output: x };

    let head_in = if variant == ModulationVariant::None {
        x
    } else {
        let h = tape.matmul(x, u1);
        let h = tape.add(h, b1);
        let x1 = tape.relu(h);
        let x1 = check_stage(tape, x1, "X1")?;
        rec.x1 = Some(x1);

        let project = |tape: &mut Tape<'a>, src: Var, u: Var, b: Var, per_window: bool| {
            let m = tape.matmul(src, u);
            let m = tape.add(m, b);
            if per_window {
                tape.gather(m, expand.clone())
            } else {
                m
            }
        };
        let (amp, phase) = match variant {
            ModulationVariant::Full | ModulationVariant::NoPhase | ModulationVariant::NoAmplitude => {
                let amp = if variant != ModulationVariant::NoAmplitude {
                    let ea = tape.gather(wv, slab_rows.clone());
                    Some(project(tape, ea, u2, b2, false))
                } else {
                    None
                };
                let phase = if variant != ModulationVariant::NoPhase {
                    let ep = tape.gather(wm, taus.to_vec());
                    Some(project(tape, ep, u3, b3, true))
                } else {
                    None
                };
                (amp, phase)
            }
            ModulationVariant::Swapped => {
                let ep = tape.gather(wm, taus.to_vec());
                let ea = tape.gather(wv, slab_rows.clone());
                (Some(project(tape, ep, u2, b2, true)), Some(project(tape, ea, u3, b3, false)))
            }
            ModulationVariant::Lrc => {
                let e = tape.gather(wm, taus.to_vec());
                (Some(project(tape, e, u2, b2, true)), Some(project(tape, e, u3, b3, true)))
            }
            ModulationVariant::SinTau => {
                let e = tape.constant(sin_tau_rows(taus, hp.lookback, hp.cycle_length));
                (Some(project(tape, e, u2, b2, true)), Some(project(tape, e, u3, b3, true)))
            }
            ModulationVariant::None => unreachable!(),
        };
        rec.amplitude = amp.map(|v| check_stage(tape, v, "A")).transpose()?;
        rec.phase = phase.map(|v| check_stage(tape, v, "P")).transpose()?;

        let mut x2 = match amp {
            Some(a) => tape.mul(x1, a),
            None => x1,
        };
        if let Some(ph) = phase {
            x2 = tape.add(x2, ph);
        }
        let x2 = check_stage(tape, x2, "X2")?;
        rec.x2 = Some(x2);
        let m = tape.matmul(x2, u4);
        let m = tape.add(m, b4);
        let x_mod = tape.dropout(m, hp.dropout, mode, rng)?;
        let x_mod = check_stage(tape, x_mod, "X_mod")?;
        rec.x_mod = Some(x_mod);
        tape.add(x, x_mod)
    };

    let h = tape.matmul(head_in, u5);
    let h = tape.add(h, b5);
    let h = tape.gelu(h);
    let h = tape.dropout(h, hp.dropout, mode, rng)?;
    let h = check_stage(tape, h, "head hidden")?;
    let y = tape.matmul(h, u6);
    let y = tape.add(y, b6);
    rec.output = check_stage(tape, y, "output")?;
    Ok(rec)
}

/// Batched forward pass without gradients. `x_norm` is `B·C x T`.
pub fn forward_batch<R: Rng + ?Sized>(
    params: &ModelParams,
    x_norm: Array2,
    taus: &[usize],
    variant: ModulationVariant,
    mode: Mode,
    rng: &mut R,
) -> Result<Array2> {
    let mut tape = Tape::new();
    let rec = record(&mut tape, params, x_norm, taus, variant, mode, rng)?;
    Ok(tape.value(rec.output).clone())
}

/// Single-window forward pass with the configured variant: `C x T` in,
/// `C x H` out.
pub fn forward<R: Rng + ?Sized>(params: &ModelParams, x_norm: &Array2, tau: usize, mode: Mode, rng: &mut R) -> Result<Array2> {
    forward_variant(params, x_norm, tau, params.hyper.variant, mode, rng)
}

pub fn forward_variant<R: Rng + ?Sized>(
    params: &ModelParams,
    x_norm: &Array2,
    tau: usize,
    variant: ModulationVariant,
    mode: Mode,
    rng: &mut R,
) -> Result<Array2> {
    forward_batch(params, x_norm.clone(), &[tau], variant, mode, rng)
}

/// Normalize, forward in eval mode, denormalize. Accepts one or more
/// windows stacked as `B·C x T`.
pub fn predict(params: &ModelParams, x_raw: &Array2, taus: &[usize], eps: f64) -> Result<Array2> {
    let (x_norm, stats) = normalize(x_raw, eps);
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let y = forward_batch(params, x_norm, taus, params.hyper.variant, Mode::Eval, &mut rng)?;
    Ok(denormalize(&y, &stats))
}
