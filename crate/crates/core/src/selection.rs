//! Uncertainty scoring, factor ranking, factor-space tangency weights and
//! their projection onto tradable assets.

use crate::error::{Error, Result};
use crate::forecasters::QuantileForecast;
use crate::linalg::{sample_covariance, GramSolver, Matrix, Vector};
use crate::panel::Period;

/// Default number of assets kept after projection.
pub const DEFAULT_TOP_N: usize = 300;
/// Covariance ridge relative to the mean diagonal when Cholesky fails.
pub const COV_RIDGE_SCALE: f64 = 1e-8;
/// Smallest admissible `|1' S^{-1} mu|`.
pub const MIN_TANGENCY_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyScore {
    pub factor_id: usize,
    pub target_period: Period,
    pub u: f64,
}

/// Mean absolute deviation of the forecast quantiles from the central
/// forecast. A forecast without quantiles scores 0.
pub fn uncertainty(fc: &QuantileForecast) -> UncertaintyScore {
    let n = fc.quantiles.len();
    let u = if n == 0 { 0.0 } else { fc.quantiles.iter().map(|(_, v)| (v - fc.central).abs()).sum::<f64>() / n as f64 };
    UncertaintyScore { factor_id: fc.factor_id, target_period: fc.target_period, u }
}

/// Factor ids in increasing uncertainty; ties go to the lower id.
pub fn rank_factors(scores: &[UncertaintyScore]) -> Vec<usize> {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| a.u.total_cmp(&b.u).then(a.factor_id.cmp(&b.factor_id)));
    s.into_iter().map(|x| x.factor_id).collect()
}

/// Cholesky solve that also rejects numerically singular factorisations
/// (a pivot below `1e-13` of the largest diagonal entry).
fn pivoted_solve(a: &Matrix, b: &Vector) -> Option<Vector> {
    let chol = nalgebra::Cholesky::new(a.clone())?;
    let l = chol.l_dirty();
    let max_diag = a.diagonal().amax();
    let min_pivot = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-13 * max_diag) {
        return None;
    }
    Some(chol.solve(b))
}

/// Tangency weights `S^{-1} mu / 1'S^{-1} mu`, renormalised to sum to one.
pub fn tangency(mu: &Vector, sigma: &Matrix) -> Result<Vector> {
    let k = mu.len();
    if sigma.shape() != (k, k) || k == 0 {
        return Err(Error::Shape(format!("mu has {k} entries, sigma is {:?}", sigma.shape())));
    }
    let x = match pivoted_solve(sigma, mu) {
        Some(x) => x,
        None => {
            let delta = COV_RIDGE_SCALE * sigma.trace() / k as f64;
            if !(delta > 0.0) {
                return Err(Error::SingularCovariance);
            }
            let mut s = sigma.clone();
            for i in 0..k {
                s[(i, i)] += delta;
            }
            pivoted_solve(&s, mu).ok_or(Error::SingularCovariance)?
        }
    };
    let denom = x.sum();
    if !(denom.abs() >= MIN_TANGENCY_DENOMINATOR) {
        return Err(Error::DegenerateDenominator(denom));
    }
    let w = x / denom;
    let total = w.sum();
    Ok(w / total)
}

/// `Z (Z'Z)^{-1} W_sel' w_f` for the selected rows `W_sel` (kappa x P) of the
/// projection matrix, with `solver` factorising `Z'Z`.
pub fn project_to_assets(w_f: &Vector, w_sel: &Matrix, z: &Matrix, solver: &GramSolver) -> Result<Vector> {
    if w_sel.nrows() != w_f.len() || w_sel.ncols() != z.ncols() {
        return Err(Error::Shape(format!("w_f has {} entries, W_f rows are {:?}, Z is {:?}", w_f.len(), w_sel.shape(), z.shape())));
    }
    let v = w_sel.transpose() * w_f;
    Ok(z * solver.solve(&v))
}

/// Keeps the `top_n` largest weights by magnitude (ties to the lower
/// index) and scales the long leg to +1 and the short leg to -1. A lone
/// surviving leg is scaled to gross exposure 1.
pub fn truncate_and_normalize(w: &Vector, top_n: usize) -> Result<Vector> {
    let mut idx: Vec<usize> = (0..w.len()).filter(|&i| w[i] != 0.0 && w[i].is_finite()).collect();
    if idx.is_empty() || top_n == 0 {
        return Err(Error::AllZeroWeights);
    }
    idx.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
    idx.truncate(top_n);
    let mut out = Vector::zeros(w.len());
    let long: f64 = idx.iter().map(|&i| w[i]).filter(|v| *v > 0.0).sum();
    let short: f64 = -idx.iter().map(|&i| w[i]).filter(|v| *v < 0.0).sum::<f64>();
    let (ls, ss) = match (long > 0.0, short > 0.0) {
        (true, true) => (1.0 / long, 1.0 / short),
        (true, false) => (1.0 / long, 0.0),
        (false, true) => (0.0, 1.0 / short),
        (false, false) => return Err(Error::AllZeroWeights),
    };
    for &i in &idx {
        out[i] = if w[i] > 0.0 { w[i] * ls } else { w[i] * ss };
    }
    Ok(out)
}

/// Everything decided at one rebalance for one subset size.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPlan {
    pub ranked_factors: Vec<usize>,
    pub kappa: usize,
    pub mu: Vector,
    pub sigma_f: Matrix,
    pub w_f: Vector,
    pub w_r: Vector,
}

/// Inputs shared by every subset size at one rebalance.
pub struct SelectionContext<'a> {
    /// Factor ids in increasing uncertainty.
    pub ranked: Vec<usize>,
    /// Central forecast per factor id.
    pub central: Vec<f64>,
    /// Factor history through the decision period, `history[k][s]`.
    pub history: &'a [Vec<f64>],
    /// Use only the most recent observations for the covariance.
    pub cov_window: Option<usize>,
    /// Projection matrix (K x P).
    pub w_f: &'a Matrix,
    /// Characteristics used to form the book (N x P).
    pub z: &'a Matrix,
    pub solver: &'a GramSolver,
    pub top_n: usize,
}

impl<'a> SelectionContext<'a> {
    pub fn new(
        forecasts: &[QuantileForecast],
        history: &'a [Vec<f64>],
        w_f: &'a Matrix,
        z: &'a Matrix,
        solver: &'a GramSolver,
        top_n: usize,
        cov_window: Option<usize>,
    ) -> Result<Self> {
        let k = w_f.nrows();
        if forecasts.len() != k || history.len() != k {
            return Err(Error::Shape(format!("{} forecasts and {} histories for {k} factors", forecasts.len(), history.len())));
        }
        let mut central = vec![0.0; k];
        for fc in forecasts {
            if fc.factor_id >= k || !fc.central.is_finite() {
                return Err(Error::Invalid(format!("bad forecast for factor {}", fc.factor_id)));
            }
            central[fc.factor_id] = fc.central;
        }
        let scores: Vec<UncertaintyScore> = forecasts.iter().map(uncertainty).collect();
        Ok(Self { ranked: rank_factors(&scores), central, history, cov_window, w_f, z, solver, top_n })
    }

    /// Tangency book on the `kappa` least-uncertain factors.
    pub fn plan(&self, kappa: usize) -> Result<SelectionPlan> {
        let k = self.ranked.len();
        if kappa == 0 || kappa > k {
            return Err(Error::Invalid(format!("kappa {kappa} outside 1..={k}")));
        }
        let sel = &self.ranked[..kappa];
        let t = self.history[0].len();
        let start = self.cov_window.map_or(0, |w| t.saturating_sub(w));
        if t - start < 2 {
            return Err(Error::InsufficientHistory { needed: 2, have: t - start });
        }
        let x = Matrix::from_fn(t - start, kappa, |s, j| self.history[sel[j]][start + s]);
        let sigma_f = sample_covariance(&x);
        let mu = Vector::from_iterator(kappa, sel.iter().map(|&j| self.central[j]));
        let w_f = tangency(&mu, &sigma_f)?;
        let w_sel = Matrix::from_fn(kappa, self.w_f.ncols(), |i, c| self.w_f[(sel[i], c)]);
        let raw = project_to_assets(&w_f, &w_sel, self.z, self.solver)?;
        let w_r = truncate_and_normalize(&raw, self.top_n)?;
        Ok(SelectionPlan { ranked_factors: self.ranked.clone(), kappa, mu, sigma_f, w_f, w_r })
    }
}
