//! Performance statistics for monthly return series and expanding
//! factor-regression alphas.
//!
//! Ratios with a zero denominator follow one rule: `0` when the numerator
//! is also zero, otherwise a signed infinity.

use log::warn;
use nalgebra::linalg::QR;

use crate::error::{Error, Result};
use crate::linalg::{spd_condition, Matrix, Vector, MAX_GRAM_CONDITION};

/// Observations per year.
pub const PERIODS_PER_YEAR: f64 = 12.0;
/// Minimum series length accepted by [`perf_report`].
pub const MIN_OBSERVATIONS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct PerfReport {
    pub n_obs: usize,
    pub total_return: f64,
    pub cagr: f64,
    pub annual_return: f64,
    pub annual_vol: f64,
    pub sharpe: f64,
    pub sortino: f64,
    pub omega: f64,
    pub max_drawdown: f64,
    /// `None` without a benchmark or when the benchmark has zero variance.
    pub beta: Option<f64>,
    pub alpha_annualized: Option<f64>,
    pub avg_monthly_turnover: Option<f64>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        num.signum() * f64::INFINITY
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn pop_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Largest peak-to-trough loss of the wealth path that starts at 1,
/// capped at 1 once wealth is wiped out.
pub fn max_drawdown(returns: &[f64]) -> f64 {
    let (mut wealth, mut peak, mut dd) = (1.0f64, 1.0f64, 0.0f64);
    for r in returns {
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
        dd = dd.max(1.0 - wealth / peak);
    }
    dd.min(1.0)
}

/// `sum max(r, 0) / sum max(-r, 0)`.
pub fn omega(returns: &[f64]) -> f64 {
    let gains: f64 = returns.iter().map(|r| r.max(0.0)).sum();
    let losses: f64 = returns.iter().map(|r| (-r).max(0.0)).sum();
    ratio(gains, losses)
}

/// Summary statistics of a monthly return series. `rf` (default zero) is
/// subtracted for Sharpe, Sortino and the benchmark regression.
pub fn perf_report(returns: &[f64], benchmark: Option<&[f64]>, rf: Option<&[f64]>, turnover: Option<&[f64]>) -> Result<PerfReport> {
    let t = returns.len();
    if t < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData(format!("{t} returns, need at least {MIN_OBSERVATIONS}")));
    }
    for (name, s) in [("benchmark", benchmark), ("risk-free", rf)] {
        if let Some(s) = s {
            if s.len() != t {
                return Err(Error::Shape(format!("{name} has {} observations, returns have {t}", s.len())));
            }
        }
    }
    let excess: Vec<f64> = match rf {
        Some(rf) => returns.iter().zip(rf).map(|(r, f)| r - f).collect(),
        None => returns.to_vec(),
    };
    let growth: f64 = returns.iter().map(|r| 1.0 + r).product();
    let cagr = if growth > 0.0 { growth.powf(PERIODS_PER_YEAR / t as f64) - 1.0 } else { -1.0 };
    let annual_return = PERIODS_PER_YEAR * mean(returns);
    let annual_vol = (PERIODS_PER_YEAR * pop_var(returns)).sqrt();
    let excess_annual = PERIODS_PER_YEAR * mean(&excess);
    let downside = (PERIODS_PER_YEAR * returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / t as f64).sqrt();

    let (beta, alpha_annualized) = match benchmark {
        Some(b) => {
            let bx: Vec<f64> = match rf {
                Some(rf) => b.iter().zip(rf).map(|(b, f)| b - f).collect(),
                None => b.to_vec(),
            };
            let vb = pop_var(&bx);
            if vb > 0.0 {
                let (mr, mb) = (mean(&excess), mean(&bx));
                let cov = excess.iter().zip(&bx).map(|(r, b)| (r - mr) * (b - mb)).sum::<f64>() / t as f64;
                let beta = cov / vb;
                (Some(beta), Some(PERIODS_PER_YEAR * (mr - beta * mb)))
            } else {
                (None, None)
            }
        }
        None => (None, None),
    };

    Ok(PerfReport {
        n_obs: t,
        total_return: growth - 1.0,
        cagr,
        annual_return,
        annual_vol,
        sharpe: ratio(excess_annual, annual_vol),
        sortino: ratio(excess_annual, downside),
        omega: omega(returns),
        max_drawdown: max_drawdown(returns),
        beta,
        alpha_annualized,
        avg_monthly_turnover: turnover.filter(|x| !x.is_empty()).map(mean),
    })
}

/// One regression of the expanding sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaStep {
    /// Factor added at this step (`None` for the intercept-only model).
    pub added: Option<String>,
    /// False when the added factor was dropped as collinear.
    pub kept: bool,
    /// Factors in the regression.
    pub included: Vec<String>,
    /// Monthly intercept.
    pub alpha: f64,
    /// White (HC0) t-statistic of the intercept.
    pub t_stat: f64,
    /// Slopes, aligned with `included`.
    pub betas: Vec<f64>,
    /// Centred R².
    pub r2: f64,
}

/// OLS fit with heteroskedasticity-robust (HC0) standard errors.
pub struct OlsFit {
    pub coef: Vector,
    pub se: Vector,
    pub r2: f64,
}

/// Regresses `y` on the columns of `x` (which should contain an intercept).
pub fn ols_hc0(x: &Matrix, y: &Vector) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if n <= p {
        return Err(Error::InsufficientData(format!("{n} observations for {p} regressors")));
    }
    let qr = QR::new(x.clone());
    let r = qr.r();
    let coef = r.solve_upper_triangular(&(qr.q().transpose() * y)).ok_or(Error::SingularDesign { cond: f64::INFINITY })?;
    let resid = y - x * &coef;
    // (X'X)^-1 = R^-1 R^-T
    let r_inv = r.solve_upper_triangular(&Matrix::identity(p, p)).ok_or(Error::SingularDesign { cond: f64::INFINITY })?;
    let bread = &r_inv * r_inv.transpose();
    let mut meat = Matrix::zeros(p, p);
    for i in 0..n {
        let xi = x.row(i).transpose();
        meat += (&xi * xi.transpose()) * (resid[i] * resid[i]);
    }
    let v = &bread * meat * &bread;
    let se = Vector::from_fn(p, |j, _| v[(j, j)].max(0.0).sqrt());
    let ybar = y.mean();
    let sst: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let ssr = resid.norm_squared();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 };
    Ok(OlsFit { coef, se, r2 })
}

fn design(cols: &[&[f64]], n: usize) -> Matrix {
    Matrix::from_fn(n, cols.len() + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] })
}

/// Condition number of the Gram matrix of the unit-norm columns.
fn normalized_condition(x: &Matrix) -> f64 {
    let mut xn = x.clone();
    for mut c in xn.column_iter_mut() {
        let norm = c.norm();
        if norm > 0.0 {
            c /= norm;
        }
    }
    spd_condition(&(xn.transpose() * &xn))
}

/// Regresses `returns` on an intercept plus the first `m` factors for
/// `m = 0..=F`. A factor that makes the design collinear is dropped with a
/// warning and its step repeats the previous regression.
pub fn expanding_alpha_regression(returns: &[f64], factors: &[(String, Vec<f64>)]) -> Result<Vec<AlphaStep>> {
    let n = returns.len();
    if let Some((name, f)) = factors.iter().find(|(_, f)| f.len() != n) {
        return Err(Error::Shape(format!("factor '{name}' has {} observations, returns have {n}", f.len())));
    }
    let y = Vector::from_column_slice(returns);
    let mut included: Vec<usize> = Vec::new();
    let mut steps = Vec::with_capacity(factors.len() + 1);
    for m in 0..=factors.len() {
        let mut kept = true;
        if m > 0 {
            included.push(m - 1);
            let cols: Vec<&[f64]> = included.iter().map(|&k| factors[k].1.as_slice()).collect();
            let cond = normalized_condition(&design(&cols, n));
            if !(cond <= MAX_GRAM_CONDITION) {
                warn!("factor '{}' is collinear with the regression (cond {cond:.3e}); dropped", factors[m - 1].0);
                included.pop();
                kept = false;
            }
        }
        let cols: Vec<&[f64]> = included.iter().map(|&k| factors[k].1.as_slice()).collect();
        let fit = ols_hc0(&design(&cols, n), &y)?;
        steps.push(AlphaStep {
            added: (m > 0).then(|| factors[m - 1].0.clone()),
            kept,
            included: included.iter().map(|&k| factors[k].0.clone()).collect(),
            alpha: fit.coef[0],
            t_stat: ratio(fit.coef[0], fit.se[0]),
            betas: fit.coef.iter().skip(1).copied().collect(),
            r2: fit.r2,
        });
    }
    Ok(steps)
}
