//! Reversible instance normalization: per-window, per-channel standardization
//! and its exact inverse.

use crate::ndmath::Array2;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel window statistics. `sigma` is the population standard
/// deviation; the effective divisor is `sqrt(sigma² + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub eps: f64,
}

impl NormStats {
    #[inline]
    pub fn divisor(&self, channel: usize) -> f64 {
        (self.sigma[channel] * self.sigma[channel] + self.eps).sqrt()
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }
}

/// Normalizes a `C x T` window row by row.
pub fn normalize(x: &Array2, eps: f64) -> (Array2, NormStats) {
    assert!(x.cols() >= 1, "normalize: window must have at least one step");
    let t = x.cols() as f64;
    let mut out = x.clone();
    let mut mu = Vec::with_capacity(x.rows());
    let mut sigma = Vec::with_capacity(x.rows());
    for c in 0..x.rows() {
        let row = x.row(c);
        let m = row.iter().sum::<f64>() / t;
        let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t;
        let s = var.sqrt();
        let div = (var + eps).sqrt();
        for v in out.row_mut(c) {
            *v = if div > 0.0 { (*v - m) / div } else { 0.0 };
        }
        mu.push(m);
        sigma.push(s);
    }
    (out, NormStats { mu, sigma, eps })
}

/// Inverts [`normalize`] on a `C x H` prediction.
pub fn denormalize(y_norm: &Array2, stats: &NormStats) -> Array2 {
    assert_eq!(y_norm.rows(), stats.channels(), "denormalize: channel count mismatch");
    let mut out = y_norm.clone();
    for c in 0..out.rows() {
        let (div, m) = (stats.divisor(c), stats.mu[c]);
        out.row_mut(c).iter_mut().for_each(|v| *v = *v * div + m);
    }
    out
}
