//! Synthetic markets with planted latent-factor structure.
//!
//! Returns follow `r_is = beta(z_{i,s-1})' f_s + u_is` exactly, with
//! characteristics drawn as persistent per-asset AR(1) attributes and
//! rank-normalized each period. The ground truth is returned alongside the
//! panel so that recovery and selection can be checked against it.

use std::fmt::Write as _;
use std::path::Path;

use crate::cae::{CaeModel, DenseLayer};
use crate::error::{Error, Result};
use crate::io::{fmt_num, write_text};
use crate::linalg::{Matrix, Vector};
use crate::panel::{rank_normalize, CrossSection, PanelData, Period};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorDynamics {
    Iid {
        mean: f64,
        sigma: f64,
    },
    /// `f_t = mean + phi (f_{t-1} - mean) + sigma e_t`.
    Ar1 {
        mean: f64,
        phi: f64,
        sigma: f64,
    },
}

impl FactorDynamics {
    /// One-step-ahead forecast MSE of the best predictor given the true law.
    pub fn oracle_forecast_mse(&self) -> f64 {
        match *self {
            FactorDynamics::Iid { sigma, .. } | FactorDynamics::Ar1 { sigma, .. } => sigma * sigma,
        }
    }

    pub fn unconditional_sd(&self) -> f64 {
        match *self {
            FactorDynamics::Iid { sigma, .. } => sigma,
            FactorDynamics::Ar1 { phi, sigma, .. } => sigma / (1.0 - phi * phi).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMapKind {
    Linear,
    /// `beta = W2 ReLU(W1 z)` with the given hidden width.
    Nonlinear {
        hidden: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_assets: usize,
    pub n_chars: usize,
    pub n_periods: usize,
    pub factor_dynamics: Vec<FactorDynamics>,
    pub beta_map: BetaMapKind,
    pub idio_sigma: f64,
    /// AR(1) coefficient of the latent attributes behind each characteristic.
    pub char_persistence: f64,
    pub first_period: Period,
    pub seed: u64,
}

impl SynthSpec {
    pub fn k_true(&self) -> usize {
        self.factor_dynamics.len()
    }

    /// `k` IID factors with the same volatility and zero mean.
    pub fn iid(n_assets: usize, n_chars: usize, k: usize, n_periods: usize, seed: u64) -> Self {
        Self {
            n_assets,
            n_chars,
            n_periods,
            factor_dynamics: vec![FactorDynamics::Iid { mean: 0.0, sigma: 0.03 }; k],
            beta_map: BetaMapKind::Linear,
            idio_sigma: 0.02,
            char_persistence: 0.95,
            first_period: 1,
            seed,
        }
    }

    /// One persistent AR(1) factor (index 0) with a positive premium among
    /// `k - 1` zero-mean IID factors of equal unconditional volatility.
    pub fn planted(n_assets: usize, n_chars: usize, k: usize, n_periods: usize, phi: f64, seed: u64) -> Self {
        let sd = 0.03;
        let mut dynamics = vec![FactorDynamics::Ar1 { mean: 0.01, phi, sigma: sd * (1.0 - phi * phi).sqrt() }];
        dynamics.extend(std::iter::repeat_n(FactorDynamics::Iid { mean: 0.0, sigma: sd }, k - 1));
        Self { factor_dynamics: dynamics, ..Self::iid(n_assets, n_chars, k, n_periods, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invalid(format!("synth: {m}")));
        if self.n_assets < 2 || self.n_chars == 0 || self.n_periods == 0 {
            return fail("need at least 2 assets, 1 characteristic and 1 period".into());
        }
        if self.k_true() == 0 || self.k_true() > self.n_chars {
            return fail(format!("K_true = {} must lie in 1..=P = {}", self.k_true(), self.n_chars));
        }
        for (k, d) in self.factor_dynamics.iter().enumerate() {
            let ok = match *d {
                FactorDynamics::Iid { sigma, mean } => sigma > 0.0 && mean.is_finite(),
                FactorDynamics::Ar1 { phi, sigma, mean } => sigma > 0.0 && phi.abs() < 1.0 && mean.is_finite(),
            };
            if !ok {
                return fail(format!("factor {k}: need sigma > 0 and |phi| < 1"));
            }
        }
        if !(self.idio_sigma >= 0.0) || !(self.char_persistence.abs() < 1.0) {
            return fail("idio_sigma must be >= 0 and |char_persistence| < 1".into());
        }
        if let BetaMapKind::Nonlinear { hidden } = self.beta_map {
            if hidden == 0 {
                return fail("nonlinear beta map needs hidden width >= 1".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BetaMap {
    /// `beta(z) = Gamma' z`, `Gamma` is `P x K`.
    Linear {
        gamma: Matrix,
    },
    Nonlinear {
        w1: Matrix,
        w2: Matrix,
    },
}

impl BetaMap {
    pub fn betas(&self, z: &Vector) -> Vector {
        match self {
            BetaMap::Linear { gamma } => gamma.transpose() * z,
            BetaMap::Nonlinear { w1, w2 } => {
                let h = (w1 * z).map(|v| v.max(0.0));
                w2 * h
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub periods: Vec<Period>,
    /// `f_s` per period, aligned with `periods`.
    pub factors: Vec<Vector>,
    pub beta_map: BetaMap,
    pub dynamics: Vec<FactorDynamics>,
}

impl GroundTruth {
    pub fn factor_path(&self, k: usize) -> Vec<f64> {
        self.factors.iter().map(|f| f[k]).collect()
    }

    /// The exact model behind a linear panel, in CAE form: a network with no
    /// hidden layer computing `Gamma' z` and `W_f = (Gamma'Gamma)^{-1} Gamma'`,
    /// so that `W_f x_s = f_s` when there is no idiosyncratic noise.
    pub fn oracle_model(&self) -> Result<CaeModel> {
        let BetaMap::Linear { gamma } = &self.beta_map else {
            return Err(Error::Invalid("oracle model requires a linear beta map".into()));
        };
        let k = gamma.ncols();
        let gtg = gamma.transpose() * gamma;
        let inv = gtg.try_inverse().ok_or_else(|| Error::Invalid("loading matrix is rank deficient".into()))?;
        let w_f = inv * gamma.transpose();
        let layers = vec![DenseLayer { weights: gamma.transpose(), bias: Vector::zeros(k) }];
        let model = CaeModel { layers, w_f, training_window: (*self.periods.first().unwrap_or(&0), *self.periods.last().unwrap_or(&0)) };
        Ok(model)
    }

    /// Truth CSV `period,factor_id,value`; the beta map goes to
    /// `beta_path` as `matrix,row,col,value`.
    pub fn write(&self, factor_path: &Path, beta_path: &Path) -> Result<()> {
        let mut out = String::from("period,factor_id,value\n");
        for (p, f) in self.periods.iter().zip(&self.factors) {
            for (k, v) in f.iter().enumerate() {
                writeln!(out, "{p},{k},{}", fmt_num(*v)).unwrap();
            }
        }
        write_text(factor_path, &out)?;
        let mut out = String::from("matrix,row,col,value\n");
        let mut dump = |name: &str, m: &Matrix| {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    writeln!(out, "{name},{r},{c},{}", fmt_num(m[(r, c)])).unwrap();
                }
            }
        };
        match &self.beta_map {
            BetaMap::Linear { gamma } => dump("gamma", gamma),
            BetaMap::Nonlinear { w1, w2 } => {
                dump("w1", w1);
                dump("w2", w2);
            }
        }
        write_text(beta_path, &out)
    }
}

fn draw_factor_paths(spec: &SynthSpec, rng: &mut RngStream) -> Vec<Vec<f64>> {
    spec.factor_dynamics
        .iter()
        .map(|d| {
            let mut path = Vec::with_capacity(spec.n_periods);
            match *d {
                FactorDynamics::Iid { mean, sigma } => {
                    for _ in 0..spec.n_periods {
                        path.push(mean + sigma * rng.normal());
                    }
                }
                FactorDynamics::Ar1 { mean, phi, sigma } => {
                    let mut prev = mean + d.unconditional_sd() * rng.normal();
                    for _ in 0..spec.n_periods {
                        let f = mean + phi * (prev - mean) + sigma * rng.normal();
                        path.push(f);
                        prev = f;
                    }
                }
            }
            path
        })
        .collect()
}

fn draw_beta_map(spec: &SynthSpec, rng: &mut RngStream) -> BetaMap {
    let (p, k) = (spec.n_chars, spec.k_true());
    // rank-normalized characteristics have variance ~1/3
    let in_scale = (3.0 / p as f64).sqrt();
    match spec.beta_map {
        BetaMapKind::Linear => BetaMap::Linear { gamma: Matrix::from_fn(p, k, |_, _| in_scale * rng.normal()) },
        BetaMapKind::Nonlinear { hidden } => {
            let w1 = Matrix::from_fn(hidden, p, |_, _| in_scale * rng.normal());
            let out_scale = (2.0 / hidden as f64).sqrt();
            let w2 = Matrix::from_fn(k, hidden, |_, _| out_scale * rng.normal());
            BetaMap::Nonlinear { w1, w2 }
        }
    }
}

/// Draws a panel and its ground truth. A pure function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<(PanelData, GroundTruth)> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);
    let mut char_rng = root.derive(1);
    let mut factor_rng = root.derive(2);
    let mut beta_rng = root.derive(3);
    let mut idio_rng = root.derive(4);

    let factors = draw_factor_paths(spec, &mut factor_rng);
    let beta_map = draw_beta_map(spec, &mut beta_rng);
    let (n, p) = (spec.n_assets, spec.n_chars);
    let rho = spec.char_persistence;
    let innov = (1.0 - rho * rho).sqrt();

    let mut latent = Matrix::from_fn(n, p, |_, _| char_rng.normal());
    let mut sections = Vec::with_capacity(spec.n_periods);
    let mut truth_periods = Vec::with_capacity(spec.n_periods);
    let mut truth_factors = Vec::with_capacity(spec.n_periods);
    for t in 0..spec.n_periods {
        let period = spec.first_period + t as Period;
        // characteristics known at the end of the previous period
        let mut chars = Matrix::zeros(n, p);
        for j in 0..p {
            let col: Vec<Option<f64>> = (0..n).map(|i| Some(latent[(i, j)])).collect();
            for (i, v) in rank_normalize(&col).into_iter().enumerate() {
                chars[(i, j)] = v;
            }
        }
        let f = Vector::from_iterator(spec.k_true(), factors.iter().map(|path| path[t]));
        let returns = Vector::from_fn(n, |i, _| {
            let beta = beta_map.betas(&chars.row(i).transpose());
            beta.dot(&f) + spec.idio_sigma * idio_rng.normal()
        });
        sections.push(CrossSection { period, assets: (0..n as u64).collect(), returns, chars });
        truth_periods.push(period);
        truth_factors.push(f);
        latent = latent.map(|a| rho * a + innov * char_rng.normal());
    }
    let panel = PanelData::new(p, sections)?;
    let truth = GroundTruth { periods: truth_periods, factors: truth_factors, beta_map, dynamics: spec.factor_dynamics.clone() };
    Ok((panel, truth))
}

pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 3 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    let den: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    if den == 0.0 {
        return 0.0;
    }
    let num: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    num / den
}
