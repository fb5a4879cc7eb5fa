//! Plain-text run configuration: `key = value` lines grouped under
//! `[section]` headers, `#` comments, no nesting.
//!
//! Every key has a default, unknown keys are rejected, and
//! [`RunConfig::to_text`] renders the fully resolved configuration in the
//! same format so that it parses back to an identical value.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::backtest::{BacktestConfig, KappaMode};
use crate::cae::{CaeConfig, Optimizer};
use crate::error::{Error, Result};
use crate::forecasters::ForecasterKind;
use crate::io::{fmt_num, parse_num};
use crate::panel::Period;
use crate::synthdata::{BetaMapKind, SynthSpec};

/// Factor laws of a generated market.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthDynamics {
    /// All factors IID.
    Iid,
    /// Factor 0 AR(1), the rest IID.
    Planted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_assets: usize,
    pub n_chars: usize,
    pub n_periods: usize,
    pub k: usize,
    pub dynamics: SynthDynamics,
    pub phi: f64,
    pub beta_map: BetaMapKind,
    pub idio_sigma: f64,
    pub char_persistence: f64,
    pub first_period: Period,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_assets: 200,
            n_chars: 20,
            n_periods: 480,
            k: 10,
            dynamics: SynthDynamics::Planted,
            phi: 0.9,
            beta_map: BetaMapKind::Linear,
            idio_sigma: 0.02,
            char_persistence: 0.95,
            first_period: 1,
        }
    }
}

impl SynthConfig {
    pub fn spec(&self, seed: u64) -> SynthSpec {
        let base = match self.dynamics {
            SynthDynamics::Iid => SynthSpec::iid(self.n_assets, self.n_chars, self.k, self.n_periods, seed),
            SynthDynamics::Planted => SynthSpec::planted(self.n_assets, self.n_chars, self.k, self.n_periods, self.phi, seed),
        };
        SynthSpec {
            beta_map: self.beta_map,
            idio_sigma: self.idio_sigma,
            char_persistence: self.char_persistence,
            first_period: self.first_period,
            ..base
        }
    }
}

/// Input and output locations. Relative paths in a file are resolved
/// against the directory of that file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathsConfig {
    pub panel: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub models: Option<PathBuf>,
    /// `period,return` series used as the market benchmark.
    pub benchmark: Option<PathBuf>,
    /// `period,rf` risk-free series.
    pub risk_free: Option<PathBuf>,
    /// `period,<factor>,...` table for the expanding alpha regression.
    pub factors: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    /// First realised out-of-sample period (default: the middle of the panel).
    pub oos_start: Option<Period>,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub cae: CaeConfig,
    /// Backtest settings; its `seed` and `oos_start` are filled from the
    /// fields above by [`RunConfig::backtest_for`].
    pub backtest: BacktestConfig,
}

type FieldResult = std::result::Result<(), String>;

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse '{v}'"))
}

fn float(v: &str) -> std::result::Result<f64, String> {
    parse_num(v).filter(|x| x.is_finite()).ok_or_else(|| format!("'{v}' is not a finite number"))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn optional<T>(v: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Option<T>, String> {
    if v.is_empty() || v == "none" {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| f(x.trim())).collect()
}

fn path(v: &str, base: &Path) -> std::result::Result<Option<PathBuf>, String> {
    optional(v, |s| {
        let p = PathBuf::from(s);
        Ok(if p.is_relative() { base.join(p) } else { p })
    })
}

fn parse_optimizer(v: &str) -> std::result::Result<Optimizer, String> {
    match v {
        "sgd" => Ok(Optimizer::Sgd),
        "adam" => Ok(Optimizer::adam()),
        _ => Err(format!("expected sgd or adam, got '{v}'")),
    }
}

fn parse_beta_map(v: &str) -> std::result::Result<BetaMapKind, String> {
    match v.strip_prefix("nonlinear:") {
        _ if v == "linear" => Ok(BetaMapKind::Linear),
        Some(h) => Ok(BetaMapKind::Nonlinear { hidden: num(h.trim())? }),
        None => Err(format!("expected linear or nonlinear:H, got '{v}'")),
    }
}

impl RunConfig {
    /// Reads a configuration file on top of the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines from `text`; `origin` names the source in
    /// errors and anchors relative paths.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let base = origin.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut section: Option<String> = None;
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |field: &str, msg: String| Error::Config { path: origin.to_path_buf(), line: line_no, field: field.to_string(), msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| err(line, "unterminated section header".into()))?.trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(name, format!("unknown section (expected one of {})", SECTIONS.join(", "))));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(line, "expected 'key = value'".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.as_deref().ok_or_else(|| err(key, "key outside a [section]".into()))?;
            let field = format!("{sec}.{key}");
            if !seen.insert(field.clone()) {
                return Err(err(&field, "set more than once".into()));
            }
            self.set(sec, key, value, &base).map_err(|m| err(&field, m))?;
        }
        Ok(())
    }

    fn set(&mut self, section: &str, key: &str, v: &str, base: &Path) -> FieldResult {
        let s = &mut self.synth;
        let c = &mut self.cae;
        let b = &mut self.backtest;
        match (section, key) {
            ("run", "seed") => self.seed = num(v)?,
            ("run", "threads") => self.threads = optional(v, num)?,
            ("run", "oos_start") => self.oos_start = optional(v, num)?,

            ("paths", "panel") => self.paths.panel = path(v, base)?,
            ("paths", "truth") => self.paths.truth = path(v, base)?,
            ("paths", "out") => self.paths.out = path(v, base)?,
            ("paths", "models") => self.paths.models = path(v, base)?,
            ("paths", "benchmark") => self.paths.benchmark = path(v, base)?,
            ("paths", "risk_free") => self.paths.risk_free = path(v, base)?,
            ("paths", "factors") => self.paths.factors = path(v, base)?,
            ("paths", "external_forecasts") => b.external_forecasts = path(v, base)?,

            ("synth", "n_assets") => s.n_assets = num(v)?,
            ("synth", "n_chars") => s.n_chars = num(v)?,
            ("synth", "n_periods") => s.n_periods = num(v)?,
            ("synth", "k") => s.k = num(v)?,
            ("synth", "dynamics") => {
                s.dynamics = match v {
                    "iid" => SynthDynamics::Iid,
                    "planted" => SynthDynamics::Planted,
                    _ => return Err(format!("expected iid or planted, got '{v}'")),
                }
            }
            ("synth", "phi") => s.phi = float(v)?,
            ("synth", "beta_map") => s.beta_map = parse_beta_map(v)?,
            ("synth", "idio_sigma") => s.idio_sigma = float(v)?,
            ("synth", "char_persistence") => s.char_persistence = float(v)?,
            ("synth", "first_period") => s.first_period = num(v)?,

            ("cae", "k") => c.k = num(v)?,
            ("cae", "hidden_layers") => c.hidden_layers = list(v, num)?,
            ("cae", "learning_rate") => c.learning_rate = float(v)?,
            ("cae", "epochs") => c.epochs = num(v)?,
            ("cae", "batch_size") => c.batch_size = num(v)?,
            ("cae", "l1_lambda") => c.l1_lambda = float(v)?,
            ("cae", "patience") => c.patience = num(v)?,
            ("cae", "n_experts") => c.n_experts = num(v)?,
            ("cae", "validation_months") => c.validation_months = num(v)?,
            ("cae", "optimizer") => c.optimizer = parse_optimizer(v)?,
            ("cae", "ridge_fallback") => {
                c.ols.ridge_fallback = boolean(v)?;
                b.ols.ridge_fallback = c.ols.ridge_fallback;
            }

            ("iid", "resamples") => b.iid.resamples = num(v)?,

            ("qboost", "learning_rate") => b.gbt.learning_rate = float(v)?,
            ("qboost", "n_trees") => b.gbt.n_trees = num(v)?,
            ("qboost", "max_depth") => b.gbt.max_depth = num(v)?,
            ("qboost", "levels") => b.gbt.levels = list(v, float)?,
            ("qboost", "bayesian_bootstrap") => b.gbt.bayesian_bootstrap = boolean(v)?,
            ("qboost", "min_samples_leaf") => b.gbt.min_samples_leaf = num(v)?,
            ("qboost", "min_rows") => b.gbt.min_rows = num(v)?,

            ("adaptive", "lambda") => b.adaptive.lambda = float(v)?,
            ("adaptive", "eta") => b.adaptive.eta = float(v)?,
            ("adaptive", "lookback") => b.adaptive.lookback = num(v)?,
            ("adaptive", "epsilon") => b.adaptive.epsilon = float(v)?,
            ("adaptive", "warmup") => b.adaptive.warmup = num(v)?,

            ("backtest", "train_start") => b.train_start = optional(v, num)?,
            ("backtest", "oos_end") => b.oos_end = optional(v, num)?,
            ("backtest", "retrain_every") => {
                b.retrain_every = num(v)?;
                c.retrain_frequency_months = b.retrain_every;
            }
            ("backtest", "rebalance_every") => b.rebalance_every = num(v)?,
            ("backtest", "cost") => b.cost_kappa = float(v)?,
            ("backtest", "top_n") => b.top_n = num(v)?,
            ("backtest", "forecasters") => b.forecasters = list(v, |x| ForecasterKind::from_str(x).map_err(|e| e.to_string()))?,
            ("backtest", "kappa") => b.kappa_mode = KappaMode::from_str(v).map_err(|e| e.to_string())?,
            ("backtest", "cov_window") => b.cov_window = optional(v, num)?,
            ("backtest", "ensemble_warmup") => b.ensemble_warmup = num(v)?,
            ("backtest", "record_weights") => b.record_weights = boolean(v)?,
            _ => return Err(format!("unknown key '{key}' in [{section}]")),
        }
        Ok(())
    }

    /// Checks every section.
    pub fn validate(&self) -> Result<()> {
        self.synth.spec(self.seed).validate()?;
        self.cae.validate()?;
        let mut b = self.backtest.clone();
        if b.forecasters.contains(&ForecasterKind::External) && b.external_forecasts.is_none() {
            // the path may still come from the command line
            b.external_forecasts = Some(PathBuf::new());
        }
        b.validate()?;
        if self.threads == Some(0) {
            return Err(Error::Invalid("run: threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Backtest settings for a panel whose periods are `periods`.
    pub fn backtest_for(&self, periods: &[Period]) -> Result<BacktestConfig> {
        let oos_start = match self.oos_start {
            Some(p) => p,
            None => *periods.get(periods.len() / 2).ok_or_else(|| Error::InsufficientData("empty panel".into()))?,
        };
        Ok(BacktestConfig { oos_start, seed: self.seed, ..self.backtest.clone() })
    }

    /// The resolved configuration in the input format.
    pub fn to_text(&self) -> String {
        let opt = |x: Option<String>| x.unwrap_or_else(|| "none".into());
        let p = |x: &Option<PathBuf>| opt(x.as_ref().map(|p| p.display().to_string()));
        let join = |xs: Vec<String>| xs.join(", ");
        let (s, c, b) = (&self.synth, &self.cae, &self.backtest);
        let sections: Vec<(&str, Vec<(&str, String)>)> = vec![
            (
                "run",
                vec![
                    ("seed", self.seed.to_string()),
                    ("threads", opt(self.threads.map(|t| t.to_string()))),
                    ("oos_start", opt(self.oos_start.map(|t| t.to_string()))),
                ],
            ),
            (
                "paths",
                vec![
                    ("panel", p(&self.paths.panel)),
                    ("truth", p(&self.paths.truth)),
                    ("out", p(&self.paths.out)),
                    ("models", p(&self.paths.models)),
                    ("benchmark", p(&self.paths.benchmark)),
                    ("risk_free", p(&self.paths.risk_free)),
                    ("factors", p(&self.paths.factors)),
                    ("external_forecasts", p(&b.external_forecasts)),
                ],
            ),
            (
                "synth",
                vec![
                    ("n_assets", s.n_assets.to_string()),
                    ("n_chars", s.n_chars.to_string()),
                    ("n_periods", s.n_periods.to_string()),
                    ("k", s.k.to_string()),
                    (
                        "dynamics",
                        match s.dynamics {
                            SynthDynamics::Iid => "iid",
                            SynthDynamics::Planted => "planted",
                        }
                        .into(),
                    ),
                    ("phi", fmt_num(s.phi)),
                    (
                        "beta_map",
                        match s.beta_map {
                            BetaMapKind::Linear => "linear".into(),
                            BetaMapKind::Nonlinear { hidden } => format!("nonlinear:{hidden}"),
                        },
                    ),
                    ("idio_sigma", fmt_num(s.idio_sigma)),
                    ("char_persistence", fmt_num(s.char_persistence)),
                    ("first_period", s.first_period.to_string()),
                ],
            ),
            (
                "cae",
                vec![
                    ("k", c.k.to_string()),
                    ("hidden_layers", join(c.hidden_layers.iter().map(|h| h.to_string()).collect())),
                    ("learning_rate", fmt_num(c.learning_rate)),
                    ("epochs", c.epochs.to_string()),
                    ("batch_size", c.batch_size.to_string()),
                    ("l1_lambda", fmt_num(c.l1_lambda)),
                    ("patience", c.patience.to_string()),
                    ("n_experts", c.n_experts.to_string()),
                    ("validation_months", c.validation_months.to_string()),
                    (
                        "optimizer",
                        match c.optimizer {
                            Optimizer::Sgd => "sgd",
                            Optimizer::Adam { .. } => "adam",
                        }
                        .into(),
                    ),
                    ("ridge_fallback", c.ols.ridge_fallback.to_string()),
                ],
            ),
            ("iid", vec![("resamples", b.iid.resamples.to_string())]),
            (
                "qboost",
                vec![
                    ("learning_rate", fmt_num(b.gbt.learning_rate)),
                    ("n_trees", b.gbt.n_trees.to_string()),
                    ("max_depth", b.gbt.max_depth.to_string()),
                    ("levels", join(b.gbt.levels.iter().map(|l| fmt_num(*l)).collect())),
                    ("bayesian_bootstrap", b.gbt.bayesian_bootstrap.to_string()),
                    ("min_samples_leaf", b.gbt.min_samples_leaf.to_string()),
                    ("min_rows", b.gbt.min_rows.to_string()),
                ],
            ),
            (
                "adaptive",
                vec![
                    ("lambda", fmt_num(b.adaptive.lambda)),
                    ("eta", fmt_num(b.adaptive.eta)),
                    ("lookback", b.adaptive.lookback.to_string()),
                    ("epsilon", fmt_num(b.adaptive.epsilon)),
                    ("warmup", b.adaptive.warmup.to_string()),
                ],
            ),
            (
                "backtest",
                vec![
                    ("train_start", opt(b.train_start.map(|t| t.to_string()))),
                    ("oos_end", opt(b.oos_end.map(|t| t.to_string()))),
                    ("retrain_every", b.retrain_every.to_string()),
                    ("rebalance_every", b.rebalance_every.to_string()),
                    ("cost", fmt_num(b.cost_kappa)),
                    ("top_n", b.top_n.to_string()),
                    ("forecasters", join(b.forecasters.iter().map(|f| f.to_string()).collect())),
                    ("kappa", b.kappa_mode.to_string()),
                    ("cov_window", opt(b.cov_window.map(|t| t.to_string()))),
                    ("ensemble_warmup", b.ensemble_warmup.to_string()),
                    ("record_weights", b.record_weights.to_string()),
                ],
            ),
        ];
        let mut o = String::new();
        for (i, (name, keys)) in sections.into_iter().enumerate() {
            if i > 0 {
                o.push('\n');
            }
            writeln!(o, "[{name}]").unwrap();
            for (k, v) in keys {
                writeln!(o, "{k} = {v}").unwrap();
            }
        }
        o
    }

    /// Hex SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

const SECTIONS: [&str; 8] = ["run", "paths", "synth", "cae", "iid", "qboost", "adaptive", "backtest"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
