//! Training of the beta network and factor projection by mini-batch descent
//! on the cross-sectional pricing loss.
//!
//! Managed-portfolio returns `x_s = (Z'Z)^{-1} Z'r` contain no trainable
//! parameters, so they are computed once per period; the loss depends on
//! `W_f` only through `f_s = W_f x_s`.

use log::debug;
use rayon::prelude::*;

use super::model::{CaeModel, DenseLayer};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, OlsOptions, Vector};
use crate::panel::{CrossSection, PanelData, Period};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaeConfig {
    pub k: usize,
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l1_lambda: f64,
    pub patience: usize,
    pub n_experts: usize,
    pub validation_months: usize,
    pub retrain_frequency_months: usize,
    pub optimizer: Optimizer,
    pub ols: OlsOptions,
}

impl Default for CaeConfig {
    fn default() -> Self {
        Self {
            k: 5,
            hidden_layers: vec![32, 16],
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 10_000,
            l1_lambda: 1e-5,
            patience: 5,
            n_experts: 50,
            validation_months: 144,
            retrain_frequency_months: 12,
            optimizer: Optimizer::Sgd,
            ols: OlsOptions::default(),
        }
    }
}

impl CaeConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Invalid(format!("cae: {m}")));
        if self.k == 0 {
            return fail("K must be at least 1");
        }
        if self.hidden_layers.contains(&0) {
            return fail("hidden layer widths must be at least 1");
        }
        if self.patience == 0 || self.n_experts == 0 || self.batch_size == 0 {
            return fail("patience, n_experts and batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(self.l1_lambda >= 0.0) {
            return fail("learning_rate must be positive and l1_lambda non-negative");
        }
        Ok(())
    }
}

/// Parameter offsets inside one flat vector: for each layer its row-major
/// weights then bias, followed by row-major `W_f`.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub dims: Vec<usize>,
    pub w_off: Vec<usize>,
    pub b_off: Vec<usize>,
    pub wf_off: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(p: usize, hidden: &[usize], k: usize) -> Self {
        let mut dims = vec![p];
        dims.extend_from_slice(hidden);
        dims.push(k);
        let mut off = 0;
        let (mut w_off, mut b_off) = (Vec::new(), Vec::new());
        for w in dims.windows(2) {
            w_off.push(off);
            off += w[0] * w[1];
            b_off.push(off);
            off += w[1];
        }
        let wf_off = off;
        off += k * p;
        Self { dims, w_off, b_off, wf_off, total: off }
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn p(&self) -> usize {
        self.dims[0]
    }

    pub fn k(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// True for entries that are weights (subject to the L1 penalty).
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.total];
        for (l, &b) in self.b_off.iter().enumerate() {
            for m in &mut mask[b..b + self.dims[l + 1]] {
                *m = false;
            }
        }
        mask
    }

    pub fn flatten(&self, model: &CaeModel) -> Vec<f64> {
        let mut theta = vec![0.0; self.total];
        for (l, layer) in model.layers.iter().enumerate() {
            let (rows, cols) = (self.dims[l + 1], self.dims[l]);
            for r in 0..rows {
                for c in 0..cols {
                    theta[self.w_off[l] + r * cols + c] = layer.weights[(r, c)];
                }
                theta[self.b_off[l] + r] = layer.bias[r];
            }
        }
        let (k, p) = (self.k(), self.p());
        for r in 0..k {
            for c in 0..p {
                theta[self.wf_off + r * p + c] = model.w_f[(r, c)];
            }
        }
        theta
    }

    pub fn unflatten(&self, theta: &[f64], window: (Period, Period)) -> CaeModel {
        let layers = (0..self.n_layers())
            .map(|l| {
                let (rows, cols) = (self.dims[l + 1], self.dims[l]);
                DenseLayer {
                    weights: Matrix::from_row_slice(rows, cols, &theta[self.w_off[l]..self.w_off[l] + rows * cols]),
                    bias: Vector::from_column_slice(&theta[self.b_off[l]..self.b_off[l] + rows]),
                }
            })
            .collect();
        let (k, p) = (self.k(), self.p());
        let w_f = Matrix::from_row_slice(k, p, &theta[self.wf_off..self.wf_off + k * p]);
        CaeModel { layers, w_f, training_window: window }
    }
}

/// Cross-sections plus their managed-portfolio returns.
pub(crate) struct TrainingSet<'a> {
    pub sections: Vec<&'a CrossSection>,
    pub managed: Vec<Vec<f64>>,
}

impl<'a> TrainingSet<'a> {
    pub fn from_rows(panel: &'a PanelData, rows: &[usize], opts: OlsOptions) -> Result<Self> {
        let sections: Vec<&CrossSection> = rows.iter().map(|&i| panel.section(i)).collect();
        let managed = sections
            .iter()
            .map(|s| {
                let solver = crate::linalg::GramSolver::new(&s.chars, opts)?;
                Ok(solver.solve(&(s.chars.transpose() * &s.returns)).as_slice().to_vec())
            })
            .collect::<Result<_>>()?;
        Ok(Self { sections, managed })
    }

    /// Every `(section, row)` observation.
    pub fn observations(&self) -> Vec<(u32, u32)> {
        self.sections.iter().enumerate().flat_map(|(s, sec)| (0..sec.len() as u32).map(move |i| (s as u32, i))).collect()
    }
}

/// Per-thread scratch buffers for forward/backward passes.
struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(layout: &Layout) -> Self {
        Self { acts: layout.dims.iter().map(|&d| vec![0.0; d]).collect(), deltas: layout.dims.iter().map(|&d| vec![0.0; d]).collect() }
    }
}

fn forward(theta: &[f64], layout: &Layout, z: &[f64], ws: &mut Workspace) {
    ws.acts[0].copy_from_slice(z);
    let last = layout.n_layers() - 1;
    for l in 0..layout.n_layers() {
        let (rows, cols) = (layout.dims[l + 1], layout.dims[l]);
        let (prev, next) = ws.acts.split_at_mut(l + 1);
        let input = &prev[l];
        let out = &mut next[0];
        let w = &theta[layout.w_off[l]..layout.w_off[l] + rows * cols];
        let b = &theta[layout.b_off[l]..layout.b_off[l] + rows];
        for r in 0..rows {
            let row = &w[r * cols..(r + 1) * cols];
            let mut s = b[r];
            for c in 0..cols {
                s += row[c] * input[c];
            }
            out[r] = if l < last { s.max(0.0) } else { s };
        }
    }
}

/// Factors `f_s = W_f x_s` for every section.
fn all_factors(theta: &[f64], layout: &Layout, data: &TrainingSet) -> Vec<Vec<f64>> {
    let (k, p) = (layout.k(), layout.p());
    let wf = &theta[layout.wf_off..layout.wf_off + k * p];
    data.managed.iter().map(|x| (0..k).map(|r| (0..p).map(|c| wf[r * p + c] * x[c]).sum()).collect()).collect()
}

/// Sum of squared pricing errors over `obs`; when `grad` is given, the
/// gradient of that sum is written into it (overwriting).
pub(crate) fn sse_and_gradient(theta: &[f64], layout: &Layout, data: &TrainingSet, obs: &[(u32, u32)], grad: Option<&mut [f64]>) -> f64 {
    let k = layout.k();
    let factors = all_factors(theta, layout, data);
    let mut ws = Workspace::new(layout);
    let z_buf_len = layout.p();
    let mut z = vec![0.0; z_buf_len];
    let mut sse = 0.0;
    let Some(grad) = grad else {
        for &(s, i) in obs {
            let sec = data.sections[s as usize];
            for c in 0..z_buf_len {
                z[c] = sec.chars[(i as usize, c)];
            }
            forward(theta, layout, &z, &mut ws);
            let beta = &ws.acts[layout.n_layers()];
            let fit: f64 = (0..k).map(|j| beta[j] * factors[s as usize][j]).sum();
            let e = sec.returns[i as usize] - fit;
            sse += e * e;
        }
        return sse;
    };
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut grad_f = vec![vec![0.0; k]; data.sections.len()];
    let n_layers = layout.n_layers();
    for &(s, i) in obs {
        let (s, i) = (s as usize, i as usize);
        let sec = data.sections[s];
        for c in 0..z_buf_len {
            z[c] = sec.chars[(i, c)];
        }
        forward(theta, layout, &z, &mut ws);
        let f = &factors[s];
        let beta = &ws.acts[n_layers];
        let fit: f64 = (0..k).map(|j| beta[j] * f[j]).sum();
        let e = sec.returns[i] - fit;
        sse += e * e;
        for j in 0..k {
            grad_f[s][j] += -2.0 * e * beta[j];
            ws.deltas[n_layers][j] = -2.0 * e * f[j];
        }
        for l in (0..n_layers).rev() {
            let (rows, cols) = (layout.dims[l + 1], layout.dims[l]);
            let w_off = layout.w_off[l];
            let b_off = layout.b_off[l];
            let (lower, upper) = ws.deltas.split_at_mut(l + 1);
            let delta = &upper[0];
            let input = &ws.acts[l];
            for r in 0..rows {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                grad[b_off + r] += d;
                let g = &mut grad[w_off + r * cols..w_off + (r + 1) * cols];
                for c in 0..cols {
                    g[c] += d * input[c];
                }
            }
            if l > 0 {
                let w = &theta[w_off..w_off + rows * cols];
                let prev = &mut lower[l];
                for c in 0..cols {
                    if input[c] > 0.0 {
                        let mut s = 0.0;
                        for r in 0..rows {
                            s += w[r * cols + c] * delta[r];
                        }
                        prev[c] = s;
                    } else {
                        prev[c] = 0.0;
                    }
                }
            }
        }
    }
    let p = layout.p();
    for (s, gf) in grad_f.iter().enumerate() {
        let x = &data.managed[s];
        for r in 0..k {
            if gf[r] == 0.0 {
                continue;
            }
            let g = &mut grad[layout.wf_off + r * p..layout.wf_off + (r + 1) * p];
            for c in 0..p {
                g[c] += gf[r] * x[c];
            }
        }
    }
    sse
}

fn l1_penalty(theta: &[f64], mask: &[bool]) -> f64 {
    theta.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v.abs()).sum()
}

/// Glorot-uniform weights, zero biases.
pub(crate) fn init_params(layout: &Layout, rng: &mut RngStream) -> Vec<f64> {
    let mut theta = vec![0.0; layout.total];
    for l in 0..layout.n_layers() {
        let (fan_out, fan_in) = (layout.dims[l + 1], layout.dims[l]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut theta[layout.w_off[l]..layout.w_off[l] + fan_in * fan_out] {
            *v = rng.uniform_range(-a, a);
        }
    }
    let (k, p) = (layout.k(), layout.p());
    let a = (6.0 / (k + p) as f64).sqrt();
    for v in &mut theta[layout.wf_off..layout.wf_off + k * p] {
        *v = rng.uniform_range(-a, a);
    }
    theta
}

/// Loss summary for one expert's fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub best_validation_loss: f64,
    pub last_validation_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Rows of the training window ending at `train_end`, split into
/// (fit rows, validation rows).
pub fn split_window(
    panel: &PanelData,
    train_start: Option<Period>,
    train_end: Period,
    validation: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let end = panel.count_through(train_end);
    let start = train_start.map(|p| panel.sections().partition_point(|s| s.period < p)).unwrap_or(0);
    let n = end.saturating_sub(start);
    if n < validation + 24 {
        return Err(Error::InsufficientHistory { needed: validation + 24, have: n });
    }
    let cut = end - validation;
    Ok(((start..cut).collect(), (cut..end).collect()))
}

/// Trains one expert on the given rows. Returns the parameters with the best
/// validation loss.
pub(crate) fn train_expert(
    config: &CaeConfig,
    layout: &Layout,
    fit: &TrainingSet,
    val: &TrainingSet,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, TrainReport)> {
    let mut theta = init_params(layout, rng);
    let mask = layout.weight_mask();
    let mut obs = fit.observations();
    let n_fit = obs.len().max(1) as f64;
    let val_obs = val.observations();
    let n_val = val_obs.len().max(1) as f64;
    let val_loss = |t: &[f64]| sse_and_gradient(t, layout, val, &val_obs, None) / n_val;
    let all_obs = fit.observations();
    let train_loss = |t: &[f64]| sse_and_gradient(t, layout, fit, &all_obs, None) / n_fit;

    let initial_train_loss = train_loss(&theta);
    let mut best = theta.clone();
    let mut best_val = val_loss(&theta);
    let mut best_epoch = 0;
    let mut last_val = best_val;
    let mut since_best = 0;
    let mut grad = vec![0.0; layout.total];
    let mut m1 = vec![0.0; layout.total];
    let mut m2 = vec![0.0; layout.total];
    let mut step = 0i32;
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut obs);
        for batch in obs.chunks(config.batch_size) {
            let nb = batch.len() as f64;
            sse_and_gradient(&theta, layout, fit, batch, Some(&mut grad));
            for (g, (&t, &m)) in grad.iter_mut().zip(theta.iter().zip(&mask)) {
                *g /= nb;
                if m && config.l1_lambda > 0.0 {
                    *g += config.l1_lambda * t.signum();
                }
            }
            step += 1;
            match config.optimizer {
                Optimizer::Sgd => {
                    for (t, g) in theta.iter_mut().zip(&grad) {
                        *t -= config.learning_rate * g;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for i in 0..layout.total {
                        m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
                        m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
                        theta[i] -= config.learning_rate * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
        epochs_run = epoch;
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        last_val = val_loss(&theta);
        if !last_val.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if last_val < best_val {
            best_val = last_val;
            best.copy_from_slice(&theta);
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                debug!("early stop at epoch {epoch}, best epoch {best_epoch}");
                break;
            }
        }
    }
    let final_train_loss = train_loss(&best);
    let report = TrainReport {
        initial_train_loss,
        final_train_loss,
        best_validation_loss: best_val,
        last_validation_loss: last_val,
        best_epoch,
        epochs_run,
    };
    Ok((best, report))
}

/// Trains `n_experts` independently initialised experts on all data through
/// `train_end` (the last `validation_months` periods held out for early
/// stopping). Expert `e` draws from `rng.derive(e)`.
pub fn train(
    config: &CaeConfig,
    panel: &PanelData,
    train_start: Option<Period>,
    train_end: Period,
    rng: &RngStream,
) -> Result<Vec<CaeModel>> {
    Ok(train_with_reports(config, panel, train_start, train_end, rng)?.into_iter().map(|(m, _)| m).collect())
}

pub fn train_with_reports(
    config: &CaeConfig,
    panel: &PanelData,
    train_start: Option<Period>,
    train_end: Period,
    rng: &RngStream,
) -> Result<Vec<(CaeModel, TrainReport)>> {
    config.validate()?;
    let (fit_rows, val_rows) = split_window(panel, train_start, train_end, config.validation_months)?;
    let fit = TrainingSet::from_rows(panel, &fit_rows, config.ols)?;
    let val = TrainingSet::from_rows(panel, &val_rows, config.ols)?;
    let layout = Layout::new(panel.n_chars(), &config.hidden_layers, config.k);
    let window = (panel.section(fit_rows[0]).period, panel.section(*val_rows.last().unwrap_or(fit_rows.last().unwrap())).period);
    (0..config.n_experts)
        .into_par_iter()
        .map(|e| {
            let mut r = rng.derive(e as u64);
            let (theta, report) = train_expert(config, &layout, &fit, &val, &mut r)?;
            Ok((layout.unflatten(&theta, window), report))
        })
        .collect()
}

/// Pricing loss over a set of panel rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricingLoss {
    /// Sum of squared pricing errors.
    pub sse: f64,
    /// `sse` plus the L1 penalty on weights.
    pub penalized: f64,
    pub n_obs: usize,
}

impl PricingLoss {
    pub fn mean(&self) -> f64 {
        if self.n_obs == 0 {
            0.0
        } else {
            self.sse / self.n_obs as f64
        }
    }
}

/// `sum_s sum_i (r_is - beta(z_is)' f_s)^2` with `f_s` from
/// [`CaeModel::extract_factors`], plus `l1_lambda * sum |w|`.
pub fn pricing_loss(model: &CaeModel, panel: &PanelData, rows: &[usize], l1_lambda: f64, opts: OlsOptions) -> Result<PricingLoss> {
    if rows.is_empty() {
        return Err(Error::Invalid("pricing_loss needs at least one period".into()));
    }
    model.validate()?;
    let layout = Layout::new(model.n_chars(), &model.hidden_widths(), model.n_factors());
    let theta = layout.flatten(model);
    let data = TrainingSet::from_rows(panel, rows, opts)?;
    let obs = data.observations();
    let sse = sse_and_gradient(&theta, &layout, &data, &obs, None);
    let penalized = sse + l1_lambda * l1_penalty(&theta, &layout.weight_mask());
    Ok(PricingLoss { sse, penalized, n_obs: obs.len() })
}

/// Total pricing R^2, `1 - SSE / sum r^2`, over the given rows.
pub fn pricing_r2(model: &CaeModel, panel: &PanelData, rows: &[usize], opts: OlsOptions) -> Result<f64> {
    let loss = pricing_loss(model, panel, rows, 0.0, opts)?;
    let ss: f64 = rows.iter().map(|&i| panel.section(i).returns.norm_squared()).sum();
    Ok(1.0 - loss.sse / ss)
}

/// Analytic gradient of the full-sample penalised pricing loss, in the flat
/// layout order of [`flatten_params`].
pub fn pricing_loss_gradient(model: &CaeModel, panel: &PanelData, rows: &[usize], l1_lambda: f64, opts: OlsOptions) -> Result<Vec<f64>> {
    let layout = Layout::new(model.n_chars(), &model.hidden_widths(), model.n_factors());
    let theta = layout.flatten(model);
    let data = TrainingSet::from_rows(panel, rows, opts)?;
    let obs = data.observations();
    let mut grad = vec![0.0; layout.total];
    sse_and_gradient(&theta, &layout, &data, &obs, Some(&mut grad));
    for ((g, t), m) in grad.iter_mut().zip(&theta).zip(layout.weight_mask()) {
        if m {
            *g += l1_lambda * t.signum();
        }
    }
    Ok(grad)
}

/// All parameters as one vector: per layer row-major weights then bias,
/// then row-major `W_f`.
pub fn flatten_params(model: &CaeModel) -> Vec<f64> {
    Layout::new(model.n_chars(), &model.hidden_widths(), model.n_factors()).flatten(model)
}

pub fn unflatten_params(template: &CaeModel, theta: &[f64]) -> CaeModel {
    Layout::new(template.n_chars(), &template.hidden_widths(), template.n_factors()).unflatten(theta, template.training_window)
}

/// Randomly initialised model (Glorot-uniform weights, zero biases).
pub fn init_model(p: usize, hidden: &[usize], k: usize, rng: &mut RngStream) -> CaeModel {
    let layout = Layout::new(p, hidden, k);
    layout.unflatten(&init_params(&layout, rng), (0, 0))
}
