use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Array2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` where the max was attained.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compares `analytic` gradients against central differences of `f`.
///
/// With `max_coords = Some(n)`, at most `n` coordinates per parameter are
/// sampled (seeded by `seed`); otherwise every coordinate is checked.
pub fn grad_check<F>(
    f: F,
    params: &[Array2],
    analytic: &[Array2],
    eps: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Array2]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "grad_check: one gradient per parameter");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Array2> = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };

    let base = f(&work);
    if !base.is_finite() {
        return Err(Error::NonFinite { stage: "grad_check at the unperturbed parameters".into() });
    }

    for (p, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), params[p].shape(), "grad_check: gradient {p} shape mismatch");
        let n = params[p].len();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let plus = f(&work);
            work[p].data_mut()[i] = orig - eps;
            let minus = f(&work);
            work[p].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    stage: format!("grad_check at parameter {p}, coordinate {i}"),
                });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (grad.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((p, i));
            }
        }
    }
    Ok(report)
}
