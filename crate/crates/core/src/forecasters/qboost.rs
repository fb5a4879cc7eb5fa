//! Quantile gradient-boosted regression trees.
//!
//! Each quantile level gets its own boosted ensemble. Every round computes
//! first-order pinball-loss gradients, grows a depth-limited tree by exact
//! greedy search on weighted gradient variance reduction (weights are
//! per-row Exp(1) draws when Bayesian bootstrap is on), and sets each leaf to
//! the empirical level-quantile of the current residuals in that leaf.

use log::warn;
use rayon::prelude::*;

use super::features::{build_features, FeatureVector, MIN_HISTORY};
use super::QuantileForecast;
use crate::error::{Error, Result};
use crate::panel::Period;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct GbtConfig {
    pub learning_rate: f64,
    pub n_trees: usize,
    pub max_depth: usize,
    pub levels: Vec<f64>,
    pub bayesian_bootstrap: bool,
    pub min_samples_leaf: usize,
    /// Minimum number of training rows.
    pub min_rows: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            n_trees: 50,
            max_depth: 3,
            levels: vec![0.05, 0.5, 0.95],
            bayesian_bootstrap: true,
            min_samples_leaf: 5,
            min_rows: 50,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.n_trees > 0
            && self.min_samples_leaf > 0
            && !self.levels.is_empty()
            && self.levels.iter().all(|a| *a > 0.0 && *a < 1.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("qboost: need 0 < learning_rate <= 1, n_trees >= 1, levels in (0, 1)".into()))
        }
    }
}

/// Pinball (quantile) loss of predicting `yhat` for `y` at level `alpha`.
pub fn pinball_loss(alpha: f64, y: f64, yhat: f64) -> f64 {
    let d = y - yhat;
    (alpha * d).max((alpha - 1.0) * d)
}

/// Lower empirical quantile (inverse empirical CDF); an exact minimiser of
/// the summed pinball loss.
fn lower_quantile(values: &mut [f64], alpha: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let idx = ((alpha * n as f64).ceil() as usize).clamp(1, n) - 1;
    values[idx]
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    /// Root is node 0. Rows with `x[feature] <= threshold` go left.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self { nodes: vec![Node::Leaf(value)] }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTrees {
    pub level: f64,
    pub base: f64,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    pub learning_rate: f64,
    /// One ensemble per level, ascending in level.
    pub per_level: Vec<QuantileTrees>,
}

impl GbtModel {
    pub fn predict_level(&self, idx: usize, x: &[f64]) -> f64 {
        let q = &self.per_level[idx];
        q.base + self.learning_rate * q.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn levels(&self) -> Vec<f64> {
        self.per_level.iter().map(|q| q.level).collect()
    }
}

struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn grow_tree<R: AsRef<[f64]>>(
    x: &[R],
    order: &[Vec<u32>],
    grad: &[f64],
    weight: &[f64],
    resid: &[f64],
    alpha: f64,
    config: &GbtConfig,
) -> Tree {
    let n = x.len();
    let n_features = order.len();
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut node_of = vec![0usize; n];
    let mut frontier = vec![0usize];

    for _ in 0..config.max_depth {
        if frontier.is_empty() {
            break;
        }
        let m = nodes.len();
        let mut active = vec![false; m];
        for &f in &frontier {
            active[f] = true;
        }
        let (mut g_tot, mut w_tot, mut n_tot) = (vec![0.0; m], vec![0.0; m], vec![0usize; m]);
        for i in 0..n {
            let nd = node_of[i];
            if active[nd] {
                g_tot[nd] += weight[i] * grad[i];
                w_tot[nd] += weight[i];
                n_tot[nd] += 1;
            }
        }
        let mut best: Vec<Option<SplitCandidate>> = (0..m).map(|_| None).collect();
        let (mut gl, mut wl, mut nl, mut last) = (vec![0.0; m], vec![0.0; m], vec![0usize; m], vec![0.0; m]);
        for (j, ord) in order.iter().enumerate() {
            for &f in &frontier {
                gl[f] = 0.0;
                wl[f] = 0.0;
                nl[f] = 0;
            }
            for &i in ord {
                let i = i as usize;
                let nd = node_of[i];
                if !active[nd] {
                    continue;
                }
                let v = x[i].as_ref()[j];
                if nl[nd] > 0 && v > last[nd] {
                    let nr = n_tot[nd] - nl[nd];
                    if nl[nd] >= config.min_samples_leaf && nr >= config.min_samples_leaf {
                        let gr = g_tot[nd] - gl[nd];
                        let wr = w_tot[nd] - wl[nd];
                        if wl[nd] > 0.0 && wr > 0.0 {
                            let gain = gl[nd] * gl[nd] / wl[nd] + gr * gr / wr - g_tot[nd] * g_tot[nd] / w_tot[nd];
                            let better = best[nd].as_ref().is_none_or(|b| gain > b.gain);
                            if gain > 1e-12 && better {
                                best[nd] = Some(SplitCandidate { gain, feature: j, threshold: 0.5 * (last[nd] + v) });
                            }
                        }
                    }
                }
                gl[nd] += weight[i] * grad[i];
                wl[nd] += weight[i];
                nl[nd] += 1;
                last[nd] = v;
            }
        }
        let _ = n_features;
        let mut next = Vec::new();
        let mut child_of = vec![(0usize, 0usize); m];
        for &f in &frontier {
            if let Some(c) = best[f].take() {
                let left = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                nodes[f] = Node::Split { feature: c.feature, threshold: c.threshold, left, right: left + 1 };
                child_of[f] = (left, left + 1);
                next.push(left);
                next.push(left + 1);
            }
        }
        for i in 0..n {
            let nd = node_of[i];
            if nd < m && active[nd] {
                if let Node::Split { feature, threshold, .. } = nodes[nd] {
                    node_of[i] = if x[i].as_ref()[feature] <= threshold { child_of[nd].0 } else { child_of[nd].1 };
                }
            }
        }
        frontier = next;
    }

    let mut leaf_resid: Vec<Vec<f64>> = vec![Vec::new(); nodes.len()];
    for i in 0..n {
        leaf_resid[node_of[i]].push(resid[i]);
    }
    for (id, vals) in leaf_resid.iter_mut().enumerate() {
        if let Node::Leaf(ref mut v) = nodes[id] {
            *v = if vals.is_empty() { 0.0 } else { lower_quantile(vals, alpha) };
        }
    }
    Tree { nodes }
}

/// Fits one boosted ensemble per configured level. Also returns the
/// training pinball loss (mean per row) before the first and after every
/// round, per level.
pub fn qboost_train_traced<R: AsRef<[f64]> + Sync>(
    x: &[R],
    y: &[f64],
    config: &GbtConfig,
    rng: &RngStream,
) -> Result<(GbtModel, Vec<Vec<f64>>)> {
    config.validate()?;
    let n = y.len();
    if x.len() != n {
        return Err(Error::Shape(format!("{} feature rows for {} targets", x.len(), n)));
    }
    if n < config.min_rows {
        return Err(Error::InsufficientHistory { needed: config.min_rows, have: n });
    }
    let d = x[0].as_ref().len();
    if x.iter().any(|r| r.as_ref().len() != d) {
        return Err(Error::Shape("ragged feature rows".into()));
    }
    if y.iter().all(|v| *v == y[0]) {
        warn!("qboost: constant target {}, fitting constant-leaf model", y[0]);
    }
    let order: Vec<Vec<u32>> = (0..d)
        .map(|j| {
            let mut o: Vec<u32> = (0..n as u32).collect();
            o.sort_by(|&a, &b| x[a as usize].as_ref()[j].total_cmp(&x[b as usize].as_ref()[j]));
            o
        })
        .collect();
    let mut levels = config.levels.clone();
    levels.sort_by(f64::total_cmp);

    let fitted: Vec<(QuantileTrees, Vec<f64>)> = levels
        .iter()
        .enumerate()
        .map(|(li, &alpha)| {
            let mut r = rng.derive(li as u64);
            let base = lower_quantile(&mut y.to_vec(), alpha);
            let mut pred = vec![base; n];
            let loss = |pred: &[f64]| y.iter().zip(pred).map(|(a, b)| pinball_loss(alpha, *a, *b)).sum::<f64>() / n as f64;
            let mut trace = vec![loss(&pred)];
            let mut trees = Vec::with_capacity(config.n_trees);
            let mut weight = vec![1.0; n];
            for _ in 0..config.n_trees {
                let grad: Vec<f64> = y.iter().zip(&pred).map(|(yv, p)| if p - yv >= 0.0 { 1.0 - alpha } else { -alpha }).collect();
                let resid: Vec<f64> = y.iter().zip(&pred).map(|(yv, p)| yv - p).collect();
                if config.bayesian_bootstrap {
                    for w in &mut weight {
                        *w = r.exp1();
                    }
                }
                let tree = grow_tree(x, &order, &grad, &weight, &resid, alpha, config);
                for (i, p) in pred.iter_mut().enumerate() {
                    *p += config.learning_rate * tree.predict(x[i].as_ref());
                }
                trace.push(loss(&pred));
                trees.push(tree);
            }
            (QuantileTrees { level: alpha, base, trees }, trace)
        })
        .collect();
    let (per_level, traces) = fitted.into_iter().unzip();
    Ok((GbtModel { learning_rate: config.learning_rate, per_level }, traces))
}

pub fn qboost_train<R: AsRef<[f64]> + Sync>(x: &[R], y: &[f64], config: &GbtConfig, rng: &RngStream) -> Result<GbtModel> {
    qboost_train_traced(x, y, config, rng).map(|(m, _)| m)
}

/// Median as central forecast, the remaining levels as quantiles. Crossing
/// predictions are resolved by sorting the predicted values.
pub fn qboost_forecast(model: &GbtModel, x: &[f64], factor_id: usize, target_period: Period) -> QuantileForecast {
    let mut values: Vec<f64> = (0..model.per_level.len()).map(|i| model.predict_level(i, x)).collect();
    values.sort_by(f64::total_cmp);
    let levels = model.levels();
    let mut central = None;
    let mut quantiles = Vec::with_capacity(levels.len());
    for (a, v) in levels.into_iter().zip(values) {
        if (a - 0.5).abs() < 1e-12 {
            central = Some(v);
        } else {
            quantiles.push((a, v));
        }
    }
    let central = central.unwrap_or_else(|| {
        // no median ensemble: midpoint of the extreme quantiles
        0.5 * (quantiles.first().map_or(0.0, |q| q.1) + quantiles.last().map_or(0.0, |q| q.1))
    });
    QuantileForecast { factor_id, target_period, central, quantiles }
}

/// The three other factors most correlated (in absolute value) with `k`
/// over indices `0..=upto`; ties go to the lower id. Missing slots (fewer
/// than three other factors) repeat `k` itself.
pub fn select_peers(series: &[Vec<f64>], k: usize, upto: usize) -> [usize; 3] {
    let corr = |a: &[f64], b: &[f64]| -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        if saa == 0.0 || sbb == 0.0 {
            0.0
        } else {
            sab / (saa * sbb).sqrt()
        }
    };
    let own = &series[k][..=upto];
    let mut scored: Vec<(f64, usize)> = (0..series.len()).filter(|&j| j != k).map(|j| (corr(own, &series[j][..=upto]).abs(), j)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut peers = [k; 3];
    for (slot, (_, j)) in peers.iter_mut().zip(scored) {
        *slot = j;
    }
    peers
}

#[derive(Debug, Clone, PartialEq)]
pub struct QBoostFactorModel {
    pub peers: [usize; 3],
    pub model: GbtModel,
}

/// Q-Boost models for every factor of one training window.
#[derive(Debug, Clone, PartialEq)]
pub struct QBoostForecaster {
    pub models: Vec<QBoostFactorModel>,
    /// Last series index used as a training target.
    pub train_end: usize,
}

impl QBoostForecaster {
    /// Trains on every row whose features and next-period target lie within
    /// `0..=train_end`; the first 90 indices only serve as feature warm-up.
    /// Factor `k` draws from `rng.derive(k)`.
    pub fn fit(series: &[Vec<f64>], train_end: usize, config: &GbtConfig, rng: &RngStream) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::Invalid("qboost: no factor series".into()));
        }
        if series.iter().any(|s| s.len() <= train_end) {
            return Err(Error::Shape("series shorter than training window".into()));
        }
        let first = MIN_HISTORY - 1;
        if train_end < first + 1 {
            return Err(Error::InsufficientHistory { needed: MIN_HISTORY + config.min_rows, have: train_end + 1 });
        }
        let models = (0..series.len())
            .into_par_iter()
            .map(|k| {
                let peers = select_peers(series, k, train_end);
                let p = [&series[peers[0]][..], &series[peers[1]][..], &series[peers[2]][..]];
                let mut xs: Vec<FeatureVector> = Vec::with_capacity(train_end - first);
                let mut ys = Vec::with_capacity(train_end - first);
                for t in first..train_end {
                    xs.push(build_features(&series[k], p, t)?);
                    ys.push(series[k][t + 1]);
                }
                let model = qboost_train(&xs, &ys, config, &rng.derive(k as u64))?;
                Ok(QBoostFactorModel { peers, model })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { models, train_end })
    }

    /// Forecasts for index `t + 1` from features at index `t`.
    pub fn forecast(&self, series: &[Vec<f64>], t: usize, target_period: Period) -> Result<Vec<QuantileForecast>> {
        self.models
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let p = [&series[m.peers[0]][..], &series[m.peers[1]][..], &series[m.peers[2]][..]];
                let x = build_features(&series[k][..=t], p, t)?;
                Ok(qboost_forecast(&m.model, &x, k, target_period))
            })
            .collect()
    }
}
