//! Expanding-window backtest: periodic CAE retraining, per-period factor
//! forecasts, uncertainty-ranked tangency books for every subset size, the
//! adaptive subset-size strategy, strategy-level ensembles, turnover and
//! linear transaction costs.
//!
//! Timing: the decision at the end of period `t` (panel row `d`) reads
//! returns through row `d`, characteristics of row `d + 1` (observed at the
//! end of `t`) and realises the returns of row `d + 1`.

mod accounting;
mod ensemble;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;

use log::{info, warn};
use rayon::prelude::*;

pub use accounting::{
    book_from_vector, book_return, book_turnover, drift_book, drift_weights, net_return, turnover, Account, Book, LedgerRow,
    MIN_PORTFOLIO_VALUE, TURNOVER_WARN,
};
pub use ensemble::{ensemble_tangency, ENSEMBLE_WARMUP};
pub use output::{
    read_ledger, read_result, read_series, write_ledger, write_rankings, write_result, write_series, write_weights, StoredStrategy,
};

use crate::adaptive::{AdaptiveConfig, KappaScheduler, KappaTrace};
use crate::cae::{train, CaeConfig, CaeEnsemble};
use crate::error::{Error, Result};
use crate::forecasters::{iid_bs_forecast, read_exchange, ForecasterKind, GbtConfig, IidConfig, QBoostForecaster, QuantileForecast};
use crate::linalg::{GramSolver, Matrix, OlsOptions, Vector};
use crate::panel::{AssetId, PanelData, Period};
use crate::rng::RngStream;
use crate::selection::{truncate_and_normalize, uncertainty, SelectionContext, DEFAULT_TOP_N};

/// Asset id under which the benchmark enters ensemble (A) books.
pub const BENCHMARK_ID: AssetId = AssetId::MAX;

const TAG_CAE: u64 = 1;
const TAG_IID: u64 = 2;
const TAG_QBOOST: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaMode {
    Fixed(usize),
    Adaptive,
}

impl std::str::FromStr for KappaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "adaptive" {
            return Ok(KappaMode::Adaptive);
        }
        match s.strip_prefix("fixed:").map(|n| n.trim().parse::<usize>()) {
            Some(Ok(n)) if n > 0 => Ok(KappaMode::Fixed(n)),
            _ => Err(Error::Invalid(format!("bad kappa mode '{s}' (expected fixed:N or adaptive)"))),
        }
    }
}

impl std::fmt::Display for KappaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KappaMode::Fixed(n) => write!(f, "fixed:{n}"),
            KappaMode::Adaptive => f.write_str("adaptive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    /// First period used for training and factor histories.
    pub train_start: Option<Period>,
    /// First realised out-of-sample period.
    pub oos_start: Period,
    /// Last realised period (default: end of panel).
    pub oos_end: Option<Period>,
    pub retrain_every: usize,
    pub rebalance_every: usize,
    /// Linear transaction cost per unit of turnover.
    pub cost_kappa: f64,
    pub top_n: usize,
    pub forecasters: Vec<ForecasterKind>,
    pub kappa_mode: KappaMode,
    /// Covariance estimated on this many latest observations (default: all).
    pub cov_window: Option<usize>,
    pub iid: IidConfig,
    pub gbt: GbtConfig,
    pub adaptive: AdaptiveConfig,
    pub ensemble_warmup: usize,
    /// Exchange file used by the external forecaster.
    pub external_forecasts: Option<PathBuf>,
    /// Keep the books of headline strategies and ensembles.
    pub record_weights: bool,
    pub ols: OlsOptions,
    pub seed: u64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            train_start: None,
            oos_start: 0,
            oos_end: None,
            retrain_every: 12,
            rebalance_every: 1,
            cost_kappa: 0.001,
            top_n: DEFAULT_TOP_N,
            forecasters: vec![ForecasterKind::Iid, ForecasterKind::QBoost],
            kappa_mode: KappaMode::Adaptive,
            cov_window: None,
            iid: IidConfig::default(),
            gbt: GbtConfig::default(),
            adaptive: AdaptiveConfig::default(),
            ensemble_warmup: ENSEMBLE_WARMUP,
            external_forecasts: None,
            record_weights: true,
            ols: OlsOptions::default(),
            seed: 0,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Invalid(format!("backtest: {m}")));
        if self.retrain_every == 0 || self.rebalance_every == 0 {
            return fail("retrain_every and rebalance_every must be at least 1");
        }
        if !(self.cost_kappa >= 0.0) {
            return fail("cost_kappa must be non-negative");
        }
        if self.top_n == 0 {
            return fail("top_n must be at least 1");
        }
        if self.forecasters.is_empty() {
            return fail("at least one forecaster is required");
        }
        if self.forecasters.contains(&ForecasterKind::External) && self.external_forecasts.is_none() {
            return fail("the external forecaster needs an exchange file");
        }
        if let Some(end) = self.oos_end {
            if end < self.oos_start {
                return fail("oos_end precedes oos_start");
            }
        }
        if matches!(self.cov_window, Some(w) if w < 2) {
            return fail("cov_window must be at least 2");
        }
        self.gbt.validate()?;
        self.adaptive.validate()
    }
}

/// Where the factor model of each retraining window comes from.
#[derive(Debug, Clone)]
pub enum ModelSource {
    /// Train a fresh expert ensemble at every retraining boundary.
    Train(CaeConfig),
    /// One ensemble for the whole run.
    Fixed(CaeEnsemble),
    /// Pre-trained ensembles keyed by the last training period; each window
    /// uses the latest one not after its boundary.
    Windows(Vec<(Period, CaeEnsemble)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Fixed(usize),
    Adaptive,
    EnsembleA,
    EnsembleB,
}

#[derive(Debug, Clone)]
pub struct StrategyLedger {
    pub name: String,
    pub kind: StrategyKind,
    pub forecaster: Option<ForecasterKind>,
    pub rows: Vec<LedgerRow>,
    /// `(realised period, book)` when recorded.
    pub weights: Option<Vec<(Period, Book)>>,
}

impl StrategyLedger {
    pub fn net_returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.net).collect()
    }

    pub fn gross_returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gross).collect()
    }

    pub fn periods(&self) -> Vec<Period> {
        self.rows.iter().map(|r| r.period).collect()
    }
}

/// Factor ranking at one rebalance.
#[derive(Debug, Clone, PartialEq)]
pub struct RankRecord {
    /// Decision period.
    pub period: Period,
    pub forecaster: ForecasterKind,
    /// Factor ids in increasing uncertainty.
    pub ranked: Vec<usize>,
    /// Uncertainty per factor id.
    pub uncertainty: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub strategies: Vec<StrategyLedger>,
    pub traces: Vec<KappaTrace>,
    pub rankings: Vec<RankRecord>,
    /// Benchmark return per realised period.
    pub benchmark: Vec<(Period, f64)>,
    /// Last training period of every retraining window.
    pub windows: Vec<Period>,
    pub n_factors: usize,
}

impl BacktestResult {
    pub fn strategy(&self, name: &str) -> Option<&StrategyLedger> {
        self.strategies.iter().find(|s| s.name == name)
    }
}

pub fn strategy_name(forecaster: ForecasterKind, kind: StrategyKind) -> String {
    match kind {
        StrategyKind::Fixed(k) => format!("{forecaster}_k{k}"),
        StrategyKind::Adaptive => format!("{forecaster}_adaptive"),
        StrategyKind::EnsembleA => "ensemble_a".into(),
        StrategyKind::EnsembleB => "ensemble_b".into(),
    }
}

struct ForecasterState {
    kind: ForecasterKind,
    fixed: Vec<Account>,
    adaptive: Option<(Account, KappaScheduler, KappaTrace)>,
    qboost: Option<QBoostForecaster>,
}

impl ForecasterState {
    fn headline(&self) -> &Account {
        match &self.adaptive {
            Some((a, _, _)) => a,
            None => &self.fixed[0],
        }
    }
}

struct Window {
    index: usize,
    /// Factor series over rows `s0..=last`, `series[k][s - s0]`.
    series: Vec<Vec<f64>>,
    w_f: Matrix,
}

fn factor_series_all(w_f: &Matrix, managed: &[Vector], s0: usize) -> Vec<Vec<f64>> {
    let k = w_f.nrows();
    let mut out = vec![Vec::with_capacity(managed.len() - s0); k];
    for x in &managed[s0..] {
        let f = w_f * x;
        for (j, s) in out.iter_mut().enumerate() {
            s.push(f[j]);
        }
    }
    out
}

fn prefix(series: &[Vec<f64>], len: usize) -> Vec<Vec<f64>> {
    series.iter().map(|s| s[..len].to_vec()).collect()
}

/// Panel rows `(train start, first realised, last realised)`.
fn resolve_rows(panel: &PanelData, config: &BacktestConfig) -> Result<(usize, usize, usize)> {
    let o =
        panel.index_of(config.oos_start).ok_or_else(|| Error::Invalid(format!("oos_start {} is not a panel period", config.oos_start)))?;
    if o == 0 {
        return Err(Error::InsufficientHistory { needed: 1, have: 0 });
    }
    let last = match config.oos_end {
        Some(p) => {
            panel.count_through(p).checked_sub(1).filter(|&i| i >= o).ok_or_else(|| Error::Invalid("empty out-of-sample range".into()))?
        }
        None => panel.len() - 1,
    };
    let s0 = config.train_start.map_or(0, |p| panel.sections().partition_point(|s| s.period < p));
    if s0 >= o {
        return Err(Error::Invalid("train_start must precede oos_start".into()));
    }
    Ok((s0, o, last))
}

/// Last training period of every retraining window of the run.
pub fn window_ends(panel: &PanelData, config: &BacktestConfig) -> Result<Vec<Period>> {
    config.validate()?;
    let (_, o, last) = resolve_rows(panel, config)?;
    Ok((0..=(last - o) / config.retrain_every).map(|j| panel.section(o + j * config.retrain_every - 1).period).collect())
}

fn window_model(models: &ModelSource, panel: &PanelData, s0: usize, j: usize, train_end: Period, root: &RngStream) -> Result<CaeEnsemble> {
    let ens = match models {
        ModelSource::Train(cae) => {
            info!("training window {j} through period {train_end}");
            let experts = train(cae, panel, Some(panel.section(s0).period), train_end, &root.derive_path(&[TAG_CAE, j as u64]))?;
            CaeEnsemble::new(experts)?
        }
        ModelSource::Fixed(e) => e.clone(),
        ModelSource::Windows(list) => list
            .iter()
            .filter(|(p, _)| *p <= train_end)
            .max_by_key(|(p, _)| *p)
            .map(|(_, e)| e.clone())
            .ok_or_else(|| Error::InsufficientData(format!("no model trained through period {train_end} or earlier")))?,
    };
    if ens.n_chars() != panel.n_chars() {
        return Err(Error::Shape(format!("model expects {} characteristics, panel has {}", ens.n_chars(), panel.n_chars())));
    }
    Ok(ens)
}

/// Trains the ensemble of every retraining window with the same random
/// streams as [`ModelSource::Train`], so that running on the result as
/// [`ModelSource::Windows`] reproduces that run.
pub fn train_windows(panel: &PanelData, cae: &CaeConfig, config: &BacktestConfig) -> Result<Vec<(Period, CaeEnsemble)>> {
    let (s0, _, _) = resolve_rows(panel, config)?;
    let root = RngStream::new(config.seed);
    window_ends(panel, config)?
        .into_iter()
        .enumerate()
        .map(|(j, train_end)| Ok((train_end, window_model(&ModelSource::Train(cae.clone()), panel, s0, j, train_end, &root)?)))
        .collect()
}

/// Runs the backtest. `benchmark` defaults to the equal-weighted market.
pub fn run_backtest(
    panel: &PanelData,
    models: &ModelSource,
    config: &BacktestConfig,
    benchmark: Option<&[(Period, f64)]>,
) -> Result<BacktestResult> {
    config.validate()?;
    let (s0, o, last) = resolve_rows(panel, config)?;
    let bench: BTreeMap<Period, f64> = match benchmark {
        Some(b) => b.iter().copied().collect(),
        None => panel.equal_weight_market().into_iter().collect(),
    };
    let root = RngStream::new(config.seed);
    let managed = panel.managed_returns(config.ols)?;
    let kappa_set = |k: usize| -> Result<Vec<usize>> {
        match config.kappa_mode {
            KappaMode::Adaptive => Ok((1..=k).collect()),
            KappaMode::Fixed(n) if n <= k => Ok(vec![n]),
            KappaMode::Fixed(n) => Err(Error::Invalid(format!("fixed kappa {n} exceeds K = {k}"))),
        }
    };

    let mut window: Option<Window> = None;
    let mut windows = Vec::new();
    let mut states: Vec<ForecasterState> = Vec::new();
    let mut kappas: Vec<usize> = Vec::new();
    let mut exchange: Option<BTreeMap<Period, Vec<QuantileForecast>>> = None;
    let mut ens_a = Account::new("ensemble_a", config.record_weights);
    let mut ens_b = Account::new("ensemble_b", config.record_weights);
    let mut bench_realised: Vec<(Period, f64)> = Vec::new();
    let mut rankings = Vec::new();

    for d in (o - 1)..last {
        let step_idx = d + 1 - o;
        let j = step_idx / config.retrain_every;
        if window.as_ref().is_none_or(|w| w.index != j) {
            let train_end_row = o + j * config.retrain_every - 1;
            let train_end = panel.section(train_end_row).period;
            let ens = window_model(models, panel, s0, j, train_end, &root)?;
            let k = ens.n_factors();
            if states.is_empty() {
                kappas = kappa_set(k)?;
                for &kind in &config.forecasters {
                    let fixed = kappas
                        .iter()
                        .map(|&kk| {
                            let headline = matches!(config.kappa_mode, KappaMode::Fixed(_));
                            Account::new(strategy_name(kind, StrategyKind::Fixed(kk)), headline && config.record_weights)
                        })
                        .collect();
                    let adaptive = match config.kappa_mode {
                        KappaMode::Adaptive => Some((
                            Account::new(strategy_name(kind, StrategyKind::Adaptive), config.record_weights),
                            KappaScheduler::new(config.adaptive, k)?,
                            KappaTrace { model: kind.name().into(), entries: Vec::new() },
                        )),
                        KappaMode::Fixed(_) => None,
                    };
                    states.push(ForecasterState { kind, fixed, adaptive, qboost: None });
                }
                if let Some(path) = &config.external_forecasts {
                    if config.forecasters.contains(&ForecasterKind::External) {
                        let (all, warnings) = read_exchange(path, k)?;
                        if !warnings.is_empty() {
                            warn!("{}: {} forecasts had crossing quantiles", path.display(), warnings.len());
                        }
                        exchange = Some(all);
                    }
                }
            } else if window.as_ref().is_some_and(|w| w.w_f.nrows() != k) {
                return Err(Error::Shape("retrained model changed the number of factors".into()));
            }
            let w_f = ens.mean_projection();
            let series = factor_series_all(&w_f, &managed[..=last], s0);
            let te = train_end_row - s0;
            for st in &mut states {
                if st.kind == ForecasterKind::QBoost {
                    let hist = prefix(&series, te + 1);
                    st.qboost = Some(QBoostForecaster::fit(&hist, te, &config.gbt, &root.derive_path(&[TAG_QBOOST, j as u64]))?);
                }
            }
            windows.push(train_end);
            window = Some(Window { index: j, series, w_f });
        }
        let win = window.as_ref().expect("window initialised");
        let k = win.w_f.nrows();
        let rebalance = step_idx % config.rebalance_every == 0;
        let next = panel.section(d + 1);
        let period_d = panel.section(d).period;
        let period_next = next.period;
        let bench_next =
            *bench.get(&period_next).ok_or_else(|| Error::InsufficientData(format!("benchmark has no return for period {period_next}")))?;
        let ret = |a: AssetId| if a == BENCHMARK_ID { Some(bench_next) } else { next.return_of(a) };
        let hist = prefix(&win.series, d - s0 + 1);

        // ensemble weights from constituent returns realised through d
        let ens_w = if rebalance {
            let mut h: Vec<Vec<f64>> = states.iter().map(|s| s.headline().gross_returns()).collect();
            let wb = ensemble_tangency(&h, config.ensemble_warmup);
            h.push(bench_realised.iter().map(|b| b.1).collect());
            let wa = ensemble_tangency(&h, config.ensemble_warmup);
            Some((wa, wb))
        } else {
            None
        };

        let solver = if rebalance {
            match GramSolver::new(&next.chars, config.ols) {
                Ok(s) => Some(s),
                Err(e) => {
                    warn!("period {period_d}: cannot factor characteristics ({e}), holding all books");
                    None
                }
            }
        } else {
            None
        };

        for st in &mut states {
            let plans: Option<Vec<Option<Book>>> = match &solver {
                None => None,
                Some(solver) => {
                    let fcs = forecasts_for(st, &hist, d, s0, period_next, exchange.as_ref(), config, &root);
                    match fcs {
                        Err(e) => {
                            warn!("period {period_d}: {} forecasts failed ({e}), holding", st.kind);
                            None
                        }
                        Ok(fcs) => {
                            let ctx = SelectionContext::new(&fcs, &hist, &win.w_f, &next.chars, solver, config.top_n, config.cov_window)?;
                            let mut u = vec![0.0; k];
                            for fc in &fcs {
                                u[fc.factor_id] = uncertainty(fc).u;
                            }
                            rankings.push(RankRecord { period: period_d, forecaster: st.kind, ranked: ctx.ranked.clone(), uncertainty: u });
                            let books = kappas
                                .par_iter()
                                .map(|&kk| match ctx.plan(kk) {
                                    Ok(p) => Some(book_from_vector(&next.assets, &p.w_r)),
                                    Err(e) => {
                                        warn!("period {period_d}: {} kappa {kk} rebalance skipped ({e})", st.kind);
                                        None
                                    }
                                })
                                .collect();
                            Some(books)
                        }
                    }
                }
            };
            if let Some((acc, sched, trace)) = &mut st.adaptive {
                let choice = if rebalance {
                    let realised: Vec<Vec<f64>> = st.fixed.iter().map(Account::gross_returns).collect();
                    let (theta, kk) = sched.next(&realised);
                    trace.entries.push((period_d, theta, kk));
                    Some(kk)
                } else {
                    None
                };
                let kk = choice.unwrap_or_else(|| acc.rows.last().map_or(1, |r| r.kappa));
                let book = plans.as_ref().and_then(|p| choice.and_then(|c| p[c - 1].clone()));
                acc.step(book, kk, period_next, config.cost_kappa, ret)?;
            }
            for (i, acc) in st.fixed.iter_mut().enumerate() {
                let book = plans.as_ref().and_then(|p| p[i].clone());
                acc.step(book, kappas[i], period_next, config.cost_kappa, ret)?;
            }
        }

        let combine = |w: &[f64], with_bench: bool| -> Option<Book> {
            let mut acc: BTreeMap<AssetId, f64> = BTreeMap::new();
            for (st, wk) in states.iter().zip(w) {
                for (a, v) in st.headline().held() {
                    *acc.entry(*a).or_insert(0.0) += wk * v;
                }
            }
            if with_bench {
                *acc.entry(BENCHMARK_ID).or_insert(0.0) += w[states.len()];
            }
            let ids: Vec<AssetId> = acc.keys().copied().collect();
            let v = Vector::from_iterator(ids.len(), acc.values().copied());
            match truncate_and_normalize(&v, config.top_n) {
                Ok(w) => Some(book_from_vector(&ids, &w)),
                Err(e) => {
                    warn!("period {period_d}: ensemble book skipped ({e})");
                    None
                }
            }
        };
        let (book_a, book_b) = match ens_w {
            None => (None, None),
            Some((wa, wb)) => {
                let a = wa
                    .map_err(|e| warn!("period {period_d}: ensemble (A) weights failed ({e}), holding"))
                    .ok()
                    .and_then(|w| combine(&w, true));
                let b = wb
                    .map_err(|e| warn!("period {period_d}: ensemble (B) weights failed ({e}), holding"))
                    .ok()
                    .and_then(|w| combine(&w, false));
                (a, b)
            }
        };
        ens_a.step(book_a, 0, period_next, config.cost_kappa, ret)?;
        ens_b.step(book_b, 0, period_next, config.cost_kappa, ret)?;
        bench_realised.push((period_next, bench_next));
    }

    let n_factors = window.as_ref().map_or(0, |w| w.w_f.nrows());
    let mut strategies = Vec::new();
    let mut traces = Vec::new();
    let into_ledger = |acc: Account, kind: StrategyKind, f: Option<ForecasterKind>, name: String| StrategyLedger {
        name,
        kind,
        forecaster: f,
        rows: acc.rows,
        weights: acc.weights,
    };
    for st in states {
        if let Some((acc, _, trace)) = st.adaptive {
            strategies.push(into_ledger(acc, StrategyKind::Adaptive, Some(st.kind), strategy_name(st.kind, StrategyKind::Adaptive)));
            traces.push(trace);
        }
        for (acc, &kk) in st.fixed.into_iter().zip(&kappas) {
            strategies.push(into_ledger(acc, StrategyKind::Fixed(kk), Some(st.kind), strategy_name(st.kind, StrategyKind::Fixed(kk))));
        }
    }
    strategies.push(into_ledger(ens_a, StrategyKind::EnsembleA, None, "ensemble_a".into()));
    strategies.push(into_ledger(ens_b, StrategyKind::EnsembleB, None, "ensemble_b".into()));
    Ok(BacktestResult { strategies, traces, rankings, benchmark: bench_realised, windows, n_factors })
}

/// Quantile forecasts of `kind` for every realised period of the run, made
/// with the same models, histories and random streams as [`run_backtest`].
pub fn forecast_path(
    panel: &PanelData,
    models: &ModelSource,
    config: &BacktestConfig,
    kind: ForecasterKind,
) -> Result<Vec<QuantileForecast>> {
    if kind == ForecasterKind::External {
        return Err(Error::Invalid("external forecasts are read, not produced".into()));
    }
    config.validate()?;
    let (s0, o, last) = resolve_rows(panel, config)?;
    let root = RngStream::new(config.seed);
    let managed = panel.managed_returns(config.ols)?;
    let mut out = Vec::new();
    let mut st = ForecasterState { kind, fixed: Vec::new(), adaptive: None, qboost: None };
    let mut series = Vec::new();
    for d in (o - 1)..last {
        let step_idx = d + 1 - o;
        if step_idx % config.retrain_every == 0 {
            let j = step_idx / config.retrain_every;
            let train_end_row = o + j * config.retrain_every - 1;
            let ens = window_model(models, panel, s0, j, panel.section(train_end_row).period, &root)?;
            series = factor_series_all(&ens.mean_projection(), &managed[..=last], s0);
            if kind == ForecasterKind::QBoost {
                let te = train_end_row - s0;
                st.qboost =
                    Some(QBoostForecaster::fit(&prefix(&series, te + 1), te, &config.gbt, &root.derive_path(&[TAG_QBOOST, j as u64]))?);
            }
        }
        let hist = prefix(&series, d - s0 + 1);
        out.extend(forecasts_for(&st, &hist, d, s0, panel.section(d + 1).period, None, config, &root)?);
    }
    Ok(out)
}

/// Factor series `(periods, series[k][t])` from the training start through
/// the last realised period, using the model of the final window.
pub fn export_factor_series(panel: &PanelData, models: &ModelSource, config: &BacktestConfig) -> Result<(Vec<Period>, Vec<Vec<f64>>)> {
    config.validate()?;
    let (s0, o, last) = resolve_rows(panel, config)?;
    let j = (last - o) / config.retrain_every;
    let ens = window_model(models, panel, s0, j, panel.section(o + j * config.retrain_every - 1).period, &RngStream::new(config.seed))?;
    let managed = panel.managed_returns(config.ols)?;
    let periods = panel.sections()[s0..=last].iter().map(|s| s.period).collect();
    Ok((periods, factor_series_all(&ens.mean_projection(), &managed[..=last], s0)))
}

#[allow(clippy::too_many_arguments)]
fn forecasts_for(
    st: &ForecasterState,
    hist: &[Vec<f64>],
    d: usize,
    s0: usize,
    target: Period,
    exchange: Option<&BTreeMap<Period, Vec<QuantileForecast>>>,
    config: &BacktestConfig,
    root: &RngStream,
) -> Result<Vec<QuantileForecast>> {
    match st.kind {
        ForecasterKind::Iid => hist
            .par_iter()
            .enumerate()
            .map(|(k, h)| {
                let mut r = root.derive_path(&[TAG_IID, d as u64, k as u64]);
                iid_bs_forecast(h, k, target, config.iid, &mut r)
            })
            .collect(),
        ForecasterKind::QBoost => {
            let q = st.qboost.as_ref().ok_or_else(|| Error::Invalid("qboost model missing".into()))?;
            q.forecast(hist, d - s0, target)
        }
        ForecasterKind::External => {
            exchange.and_then(|m| m.get(&target)).cloned().ok_or(Error::MissingFactor { factor: 0, period: target })
        }
    }
}
