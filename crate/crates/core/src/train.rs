//! Losses, Adam, and the epoch loop with validation early stopping.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{make_windows, SeriesDataset, Split, WindowBatch};
use crate::error::{Error, Result};
use crate::model::{record, Hyper, ModelParams, ModulationVariant, AMPLITUDE_POOL, PHASE_POOL};
use crate::ndmath::{grad_check, Array2, ComplexVec, DftPlan, GradCheckReport, Mode, Tape};
use crate::revin::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Hybrid,
    Mae,
    Mse,
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(LossKind::Hybrid),
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::config(format!("unknown loss `{s}` (hybrid, mae, mse)"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Hybrid => "hybrid",
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        })
    }
}

fn check_shapes(pred: &Array2, truth: &Array2) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::config(format!(
            "prediction is {}x{} but target is {}x{}",
            pred.rows(),
            pred.cols(),
            truth.rows(),
            truth.cols()
        )));
    }
    Ok(())
}

/// A loss over `rows x H` predictions, each row one channel's horizon.
#[derive(Debug, Clone)]
pub struct Loss {
    pub kind: LossKind,
    pub alpha: f64,
    plan: DftPlan,
}

impl Loss {
    pub fn new(kind: LossKind, alpha: f64, horizon: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(Self { kind, alpha, plan: DftPlan::new(horizon) })
    }

    pub fn value(&self, pred: &Array2, truth: &Array2) -> Result<f64> {
        self.value_and_grad(pred, truth, false).map(|(v, _)| v)
    }

    /// Loss value and, when `with_grad`, its gradient with respect to `pred`.
    pub fn value_and_grad(&self, pred: &Array2, truth: &Array2, with_grad: bool) -> Result<(f64, Array2)> {
        check_shapes(pred, truth)?;
        if pred.cols() != self.plan.len() {
            return Err(Error::config(format!("loss built for horizon {}, got {}", self.plan.len(), pred.cols())));
        }
        let n = pred.len() as f64;
        let mut grad = if with_grad { Array2::zeros(pred.rows(), pred.cols()) } else { Array2::zeros(0, 0) };
        let mut value = 0.0;
        let time_weight = match self.kind {
            LossKind::Hybrid => 1.0 - self.alpha,
            LossKind::Mae => 1.0,
            LossKind::Mse => 0.0,
        };
        match self.kind {
            LossKind::Mse => {
                for (i, (p, t)) in pred.data().iter().zip(truth.data()).enumerate() {
                    let e = p - t;
                    value += e * e;
                    if with_grad {
                        grad.data_mut()[i] = 2.0 * e / n;
                    }
                }
                value /= n;
            }
            LossKind::Hybrid | LossKind::Mae => {
                let mut sum = 0.0;
                for (i, (p, t)) in pred.data().iter().zip(truth.data()).enumerate() {
                    let e = p - t;
                    sum += e.abs();
                    if with_grad && e != 0.0 {
                        grad.data_mut()[i] = time_weight * e.signum() / n;
                    }
                }
                value = time_weight * sum / n;
            }
        }
        if self.kind == LossKind::Hybrid && self.alpha > 0.0 {
            let h = pred.cols();
            let mut sum = 0.0;
            for r in 0..pred.rows() {
                let diff: Vec<f64> = pred.row(r).iter().zip(truth.row(r)).map(|(p, t)| p - t).collect();
                let spec = self.plan.forward_real(&diff);
                let mut g = ComplexVec::zeros(h);
                for k in 0..h {
                    let m = spec.abs(k);
                    sum += m;
                    if m > 0.0 {
                        let w = self.alpha / (m * n);
                        g.re[k] = spec.re[k] * w;
                        g.im[k] = spec.im[k] * w;
                    }
                }
                if with_grad {
                    let back = self.plan.backward_real(&g);
                    for (o, b) in grad.row_mut(r).iter_mut().zip(back) {
                        *o += b;
                    }
                }
            }
            value += self.alpha * sum / n;
        }
        Ok((value, grad))
    }
}

/// `(1-α)·MAE + α·mean_k |F(truth) - F(pred)|`, the DFT taken along each row.
pub fn loss_hybrid(pred: &Array2, truth: &Array2, alpha: f64) -> Result<f64> {
    Loss::new(LossKind::Hybrid, alpha, pred.cols())?.value(pred, truth)
}

pub fn loss_mae(pred: &Array2, truth: &Array2) -> Result<f64> {
    Loss::new(LossKind::Mae, 0.0, pred.cols())?.value(pred, truth)
}

pub fn loss_mse(pred: &Array2, truth: &Array2) -> Result<f64> {
    Loss::new(LossKind::Mse, 0.0, pred.cols())?.value(pred, truth)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for a list of arrays. Arrays flagged sparse are updated
/// row by row, skipping rows whose gradient is entirely zero (moments of
/// skipped rows are not decayed).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2>,
    pub v: Vec<Array2>,
    pub step: u64,
    sparse: Vec<bool>,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)], sparse: Vec<bool>) -> Self {
        assert_eq!(shapes.len(), sparse.len(), "AdamState: one sparsity flag per array");
        let zeros = || shapes.iter().map(|&(r, c)| Array2::zeros(r, c)).collect();
        Self { m: zeros(), v: zeros(), step: 0, sparse }
    }

    /// State for every array of `params`, with both pools sparse.
    pub fn for_model(params: &ModelParams) -> Self {
        let shapes: Vec<_> = params.arrays().iter().map(|a| a.shape()).collect();
        let sparse = (0..shapes.len()).map(|i| i == PHASE_POOL || i == AMPLITUDE_POOL).collect();
        Self::new(&shapes, sparse)
    }

    /// One bias-corrected Adam update.
    pub fn update(&mut self, params: &mut [&mut Array2], grads: &[Array2], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "adam: parameter count mismatch");
        assert_eq!(grads.len(), self.m.len(), "adam: gradient count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = &grads[i];
            assert_eq!(g.shape(), p.shape(), "adam: gradient {i} shape mismatch");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let cols = p.cols();
            for r in 0..p.rows() {
                let gr = g.row(r);
                if self.sparse[i] && gr.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let (pr, mr, vr) = (
                    &mut p.data_mut()[r * cols..(r + 1) * cols],
                    &mut m.data_mut()[r * cols..(r + 1) * cols],
                    &mut v.data_mut()[r * cols..(r + 1) * cols],
                );
                for k in 0..cols {
                    mr[k] = ADAM_BETA1 * mr[k] + (1.0 - ADAM_BETA1) * gr[k];
                    vr[k] = ADAM_BETA2 * vr[k] + (1.0 - ADAM_BETA2) * gr[k] * gr[k];
                    let mhat = mr[k] / c1;
                    let vhat = vr[k] / c2;
                    pr[k] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Applies one Adam step to every model array.
pub fn adam_step(params: &mut ModelParams, grads: &[Array2], state: &mut AdamState, lr: f64) {
    state.update(&mut params.arrays_mut(), grads, lr);
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub lr: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch: usize,
    pub dropout: f64,
    /// Head width `d`.
    pub head: usize,
    pub eps_norm: f64,
    pub seed: u64,
    pub variant: ModulationVariant,
    pub loss_kind: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lookback: 96,
            horizon: 96,
            lr: 2e-3,
            alpha: 0.2,
            epochs: 30,
            patience: 5,
            batch: 32,
            dropout: 0.5,
            head: 512,
            eps_norm: crate::revin::DEFAULT_EPS,
            seed: 0,
            variant: ModulationVariant::Full,
            loss_kind: LossKind::Hybrid,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.patience == 0 || self.epochs == 0 || self.batch == 0 {
            return Err(Error::config("epochs, patience and batch must be at least 1"));
        }
        if !(self.eps_norm >= 0.0) {
            return Err(Error::config("eps_norm must be >= 0"));
        }
        Ok(())
    }

    pub fn hyper(&self, channels: usize, cycle_length: usize) -> Result<Hyper> {
        Hyper::new(self.lookback, self.horizon, channels, cycle_length, self.head, self.dropout, self.variant)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

impl EpochRecord {
    /// `epoch,train_loss,val_loss,seconds`
    pub fn log_line(&self) -> String {
        format!("{},{:.6},{:.6},{:.3}", self.epoch, self.train_loss, self.val_loss, self.seconds)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Validation loss and MSE of the freshly initialized model.
    pub initial_val_loss: f64,
    pub initial_val_mse: f64,
}

/// One optimizer step on `batch`. Returns the batch loss.
pub fn train_step<R: Rng + ?Sized>(
    params: &mut ModelParams,
    adam: &mut AdamState,
    batch: &WindowBatch,
    loss: &Loss,
    lr: f64,
    eps_norm: f64,
    rng: &mut R,
) -> Result<f64> {
    let (value, grads) = loss_and_gradients(params, batch, loss, eps_norm, Mode::Train, rng)?;
    if !value.is_finite() {
        return Err(Error::NonFinite { stage: "training loss".into() });
    }
    adam_step(params, &grads, adam, lr);
    Ok(value)
}

/// Loss of the denormalized predictions on `batch` and its gradient with
/// respect to every model array (zeros for arrays the variant never reads).
pub fn loss_and_gradients<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &WindowBatch,
    loss: &Loss,
    eps_norm: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, Vec<Array2>)> {
    let (x_norm, stats) = normalize(&batch.inputs, eps_norm);
    let divisors: Vec<f64> = (0..stats.channels()).map(|c| stats.divisor(c)).collect();
    let mut tape = Tape::new();
    let rec = record(&mut tape, params, x_norm, &batch.tau, params.hyper.variant, mode, rng)?;
    let y = tape.row_affine(rec.output, divisors, &stats.mu);
    let (value, g) = loss.value_and_grad(tape.value(y), &batch.targets, true)?;
    let obj = tape.objective(y, value, g);
    let mut grads = tape.backward(obj);
    let out = rec
        .params
        .iter()
        .zip(params.arrays())
        .map(|(v, a)| grads.take(*v).unwrap_or_else(|| Array2::zeros(a.rows(), a.cols())))
        .collect();
    Ok((value, out))
}

/// Windows per evaluation batch.
pub const EVAL_BATCH: usize = 256;

/// Eval-mode denormalized predictions and targets for every window of
/// `split`, stacked as `(windows·C) x H`.
pub fn predict_split(params: &ModelParams, ds: &SeriesDataset, split: Split, eps_norm: f64) -> Result<(Array2, Array2)> {
    let hp = &params.hyper;
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let stream = make_windows(ds, split, hp.lookback, hp.horizon, EVAL_BATCH, false, &mut rng)?;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut rows = 0;
    for batch in stream {
        let y = crate::model::predict(params, &batch.inputs, &batch.tau, eps_norm)?;
        rows += y.rows();
        pred.extend_from_slice(y.data());
        truth.extend_from_slice(batch.targets.data());
    }
    Ok((Array2::new(rows, hp.horizon, pred), Array2::new(rows, hp.horizon, truth)))
}

fn validate_model(params: &ModelParams, ds: &SeriesDataset, loss: &Loss, eps: f64) -> Result<(f64, f64)> {
    let (pred, truth) = predict_split(params, ds, Split::Val, eps)?;
    let l = loss.value(&pred, &truth)?;
    let mse = loss_mse(&pred, &truth)?;
    if !l.is_finite() {
        return Err(Error::NonFinite { stage: "validation loss".into() });
    }
    Ok((l, mse))
}

/// Trains on an already standardized dataset; see [`train_model_with`].
pub fn train_model(ds: &SeriesDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_model_with(ds, cfg, |_| {})
}

/// Trains for up to `cfg.epochs` epochs, calling `on_epoch` after each, and
/// returns the parameters of the best validation epoch. Stops once the
/// validation loss has not improved for `cfg.patience` epochs.
pub fn train_model_with(
    ds: &SeriesDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let hyper = cfg.hyper(ds.channels(), ds.cycle_length())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(hyper, &mut rng);
    let mut adam = AdamState::for_model(&params);
    let loss = Loss::new(cfg.loss_kind, cfg.alpha, cfg.horizon)?;
    // fail early on splits that cannot hold a window
    for split in [Split::Train, Split::Val] {
        crate::dataio::window_starts(ds, split, cfg.lookback, cfg.horizon)?;
    }

    let (initial_val_loss, initial_val_mse) = validate_model(&params, ds, &loss, cfg.eps_norm)?;
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let stream = make_windows(ds, Split::Train, cfg.lookback, cfg.horizon, cfg.batch, true, &mut rng)?;
        let (mut sum, mut count) = (0.0, 0usize);
        for (b, batch) in stream.enumerate() {
            let value = train_step(&mut params, &mut adam, &batch, &loss, cfg.lr, cfg.eps_norm, &mut rng).map_err(
                |e| match e {
                    Error::NonFinite { stage } => Error::NonFinite { stage: format!("{stage} at epoch {epoch}, batch {}", b + 1) },
                    other => other,
                },
            )?;
            sum += value * batch.len() as f64;
            count += batch.len();
        }
        let (val_loss, val_mse) = validate_model(&params, ds, &loss, cfg.eps_norm)?;
        let rec = EpochRecord { epoch, train_loss: sum / count as f64, val_loss, val_mse, seconds: start.elapsed().as_secs_f64() };
        on_epoch(&rec);
        history.push(rec);
        if val_loss < best.0 {
            best = (val_loss, params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { params: best.1, history, best_epoch: best.2, initial_val_loss, initial_val_mse })
}

/// Central-difference check of [`loss_and_gradients`] on the toy instance
/// C=2, T=8, H=4, L=4, d=16, dropout off: three windows, hybrid loss with
/// α = 0.5, perturbation 1e-5, every coordinate of every array.
pub fn gradcheck_toy(variant: ModulationVariant, seed: u64) -> Result<GradCheckReport> {
    let hyper = Hyper::new(8, 4, 2, 4, 16, 0.0, variant)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(hyper, &mut rng);
    for b in [&mut params.b1, &mut params.b2, &mut params.b3, &mut params.b4, &mut params.b5, &mut params.b6] {
        *b = Array2::random_normal(1, b.cols(), 0.3, &mut rng);
    }
    let batch = WindowBatch {
        inputs: Array2::random_normal(6, 8, 1.5, &mut rng),
        targets: Array2::random_normal(6, 4, 1.5, &mut rng),
        tau: vec![1, 3, 1],
        starts: vec![0, 1, 2],
        channels: 2,
    };
    let loss = Loss::new(LossKind::Hybrid, 0.5, 4)?;
    let eps = crate::revin::DEFAULT_EPS;
    let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
    let (_, analytic) = loss_and_gradients(&params, &batch, &loss, eps, Mode::Eval, &mut no_rng)?;
    let arrays: Vec<Array2> = params.arrays().iter().map(|a| (*a).clone()).collect();
    let f = |ps: &[Array2]| {
        let p = ModelParams::from_arrays(hyper, ps.to_vec()).expect("same shapes");
        let mut r = rand::rngs::mock::StepRng::new(0, 0);
        loss_and_gradients(&p, &batch, &loss, eps, Mode::Eval, &mut r).map_or(f64::NAN, |v| v.0)
    };
    grad_check(f, &arrays, &analytic, 1e-5, None, 0)
}
