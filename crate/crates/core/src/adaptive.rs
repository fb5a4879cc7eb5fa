//! Data-driven choice of the factor-subset size: Sortino scores of the
//! candidate sizes, a log-sum-exp relaxation over `theta = log kappa`, a
//! temporal smoothness penalty and a one-dimensional minimisation.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{fmt_num, write_text};
use crate::panel::Period;

/// Points of the coarse grid in [`select_kappa`].
pub const GRID_POINTS: usize = 2000;
/// Bracket width at which golden-section refinement stops.
pub const THETA_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub lambda: f64,
    pub eta: f64,
    /// Realised returns per candidate used for scoring.
    pub lookback: usize,
    pub epsilon: f64,
    /// Rebalances that use `kappa = K/2` before scoring starts.
    pub warmup: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self { lambda: 1.0, eta: 2.0, lookback: 12, epsilon: 1e-6, warmup: 12 }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.eta >= 0.0) || self.lookback < 2 || !(self.epsilon > 0.0) {
            return Err(Error::Invalid("adaptive: need lambda > 0, eta >= 0, lookback >= 2, epsilon > 0".into()));
        }
        Ok(())
    }
}

/// `mean(r) / (sqrt(mean(min(r, 0)^2)) + epsilon)`.
pub fn sortino(returns: &[f64], epsilon: f64) -> f64 {
    if returns.is_empty() {
        return 0.0;
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let down = (returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / n).sqrt();
    mean / (down + epsilon)
}

/// `(1/lambda) log sum_k exp(lambda SoR(k) - lambda (theta - log k)^2)`,
/// evaluated with the largest exponent factored out.
pub fn lse_objective(theta: f64, sortino_by_kappa: &[(usize, f64)], lambda: f64) -> f64 {
    let terms: Vec<f64> = sortino_by_kappa.iter().map(|&(k, s)| lambda * (s - (theta - (k as f64).ln()).powi(2))).collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()) / lambda
}

/// Derivative of [`lse_objective`] in `theta`: the softmax-weighted mean of
/// `-2 (theta - log k)`.
pub fn lse_derivative(theta: f64, sortino_by_kappa: &[(usize, f64)], lambda: f64) -> f64 {
    let terms: Vec<f64> = sortino_by_kappa.iter().map(|&(k, s)| lambda * (s - (theta - (k as f64).ln()).powi(2))).collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (t, &(k, _)) in terms.iter().zip(sortino_by_kappa) {
        let w = (t - m).exp();
        num += w * -2.0 * (theta - (k as f64).ln());
        den += w;
    }
    num / den
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minimises `-lse(theta) + (eta/2)(theta - theta_prev)^2` over
/// `[-1, log K + 1]` (K the largest candidate) by a dense grid followed by
/// golden-section refinement around the best grid point. Returns `theta*`
/// and `round(exp(theta*))` clamped to `[1, K]`.
pub fn select_kappa(config: &AdaptiveConfig, sortino_by_kappa: &[(usize, f64)], theta_prev: f64) -> (f64, usize) {
    let k_max = sortino_by_kappa.iter().map(|p| p.0).max().unwrap_or(1).max(1);
    let obj = |th: f64| -lse_objective(th, sortino_by_kappa, config.lambda) + 0.5 * config.eta * (th - theta_prev).powi(2);
    let (lo, hi) = (-1.0, (k_max as f64).ln() + 1.0);
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let (mut best_i, mut best_v) = (0, f64::INFINITY);
    for i in 0..GRID_POINTS {
        let v = obj(lo + step * i as f64);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let a = lo + step * best_i.saturating_sub(1) as f64;
    let b = (lo + step * (best_i + 1) as f64).min(hi);
    let refined = golden_section(obj, a, b, THETA_TOL);
    let grid_theta = lo + step * best_i as f64;
    let theta = if obj(refined) <= best_v { refined } else { grid_theta };
    (theta, kappa_of(theta, k_max))
}

fn kappa_of(theta: f64, k_max: usize) -> usize {
    (theta.exp().round() as usize).clamp(1, k_max)
}

/// `K/2` rounded half to even, at least 1.
pub fn initial_kappa(k_max: usize) -> usize {
    ((k_max as f64 / 2.0).round_ties_even() as usize).max(1)
}

/// Sequential subset-size selection for one forecasting model.
#[derive(Debug, Clone)]
pub struct KappaScheduler {
    pub config: AdaptiveConfig,
    pub k_max: usize,
    theta_prev: f64,
    decisions: usize,
}

impl KappaScheduler {
    pub fn new(config: AdaptiveConfig, k_max: usize) -> Result<Self> {
        config.validate()?;
        if k_max == 0 {
            return Err(Error::Invalid("adaptive: need at least one factor".into()));
        }
        Ok(Self { config, k_max, theta_prev: (k_max as f64 / 2.0).ln(), decisions: 0 })
    }

    /// Chooses `(theta, kappa)` for the next rebalance. `realized[k - 1]`
    /// holds every realised return of the fixed-`k` strategy so far; the
    /// most recent `lookback` are scored. The warm-up answer is returned
    /// until `warmup` decisions have been made and a full lookback window
    /// exists.
    pub fn next(&mut self, realized: &[Vec<f64>]) -> (f64, usize) {
        let have = realized.iter().map(Vec::len).min().unwrap_or(0);
        let out = if self.decisions < self.config.warmup || have < self.config.lookback || realized.len() != self.k_max {
            (self.theta_prev, initial_kappa(self.k_max))
        } else {
            let h = self.config.lookback;
            let sor: Vec<(usize, f64)> =
                realized.iter().enumerate().map(|(i, r)| (i + 1, sortino(&r[r.len() - h..], self.config.epsilon))).collect();
            select_kappa(&self.config, &sor, self.theta_prev)
        };
        self.theta_prev = out.0;
        self.decisions += 1;
        out
    }
}

/// Runs a [`KappaScheduler`] over `n` rebalances, where decision `i` sees
/// the first `i` realised returns of every fixed-`k` strategy.
pub fn kappa_schedule(realized: &[Vec<f64>], n: usize, config: AdaptiveConfig) -> Result<Vec<(f64, usize)>> {
    let mut s = KappaScheduler::new(config, realized.len())?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let seen: Vec<Vec<f64>> = realized.iter().map(|r| r[..i.min(r.len())].to_vec()).collect();
        out.push(s.next(&seen));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaTrace {
    pub model: String,
    /// `(decision period, theta, kappa)`.
    pub entries: Vec<(Period, f64, usize)>,
}

/// Writes traces as `period,model,theta,kappa`.
pub fn write_traces(path: &Path, traces: &[KappaTrace]) -> Result<()> {
    let mut out = String::from("period,model,theta,kappa\n");
    for tr in traces {
        for (p, th, k) in &tr.entries {
            writeln!(out, "{p},{},{},{k}", tr.model, fmt_num(*th)).unwrap();
        }
    }
    write_text(path, &out)
}
