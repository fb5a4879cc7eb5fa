//! Tangency weighting of strategy-level return histories.

use crate::error::{Error, Result};
use crate::linalg::{sample_covariance, Matrix, Vector};
use crate::selection::tangency;

/// Default number of joint observations before tangency weights replace
/// equal weights.
pub const ENSEMBLE_WARMUP: usize = 12;

/// Tangency weights over the full return histories (`history[j]` is the
/// series of constituent `j`, all the same length). Equal weights while
/// fewer than `warmup` joint observations exist.
pub fn ensemble_tangency(history: &[Vec<f64>], warmup: usize) -> Result<Vec<f64>> {
    let m = history.len();
    if m == 0 {
        return Err(Error::Invalid("ensemble needs at least one constituent".into()));
    }
    let t = history[0].len();
    if history.iter().any(|h| h.len() != t) {
        return Err(Error::Shape("constituent histories differ in length".into()));
    }
    if t < warmup.max(2) {
        return Ok(vec![1.0 / m as f64; m]);
    }
    let x = Matrix::from_fn(t, m, |s, j| history[j][s]);
    let mu = Vector::from_fn(m, |j, _| history[j].iter().sum::<f64>() / t as f64);
    let w = tangency(&mu, &sample_covariance(&x))?;
    Ok(w.iter().copied().collect())
}
