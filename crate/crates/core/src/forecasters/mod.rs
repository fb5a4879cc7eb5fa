//! One-step-ahead central and quantile forecasts for latent factor series.
//!
//! Three interchangeable engines: an IID bootstrap of the sample mean,
//! quantile gradient-boosted trees on engineered time-series features, and
//! an adapter for forecasts produced outside this crate.

mod external;
mod features;
mod iid;
mod qboost;

use std::fmt;
use std::str::FromStr;

pub use external::{
    load_exchange, read_exchange, read_factor_series, write_exchange, write_factor_series, ExchangeWarning, ForecastsByPeriod,
};
pub use features::{build_features, FeatureVector, FEATURE_NAMES, MIN_HISTORY, N_FEATURES};
pub use iid::{iid_bs_forecast, IidConfig, IID_LEVELS};
pub use qboost::{
    pinball_loss, qboost_forecast, qboost_train, qboost_train_traced, select_peers, GbtConfig, GbtModel, Node, QBoostFactorModel,
    QBoostForecaster, QuantileTrees, Tree,
};

use crate::error::{Error, Result};
use crate::panel::Period;

/// Central forecast plus quantiles for one factor and target period.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    pub factor_id: usize,
    pub target_period: Period,
    pub central: f64,
    /// `(level, value)` ascending in level, values non-decreasing.
    pub quantiles: Vec<(f64, f64)>,
}

impl QuantileForecast {
    pub fn is_monotone(&self) -> bool {
        self.quantiles.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1)
    }

    /// Sorts levels, then sorts values and reassigns them to levels in order.
    /// Returns true if the values were out of order.
    pub fn enforce_monotone(&mut self) -> bool {
        self.quantiles.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values: Vec<f64> = self.quantiles.iter().map(|q| q.1).collect();
        let crossed = values.windows(2).any(|w| w[0] > w[1]);
        if crossed {
            values.sort_by(f64::total_cmp);
            for (q, v) in self.quantiles.iter_mut().zip(values) {
                q.1 = v;
            }
        }
        crossed
    }

    pub fn quantile(&self, level: f64) -> Option<f64> {
        self.quantiles.iter().find(|q| (q.0 - level).abs() < 1e-12).map(|q| q.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ForecasterKind {
    Iid,
    QBoost,
    External,
}

impl ForecasterKind {
    pub fn name(self) -> &'static str {
        match self {
            ForecasterKind::Iid => "iid",
            ForecasterKind::QBoost => "qboost",
            ForecasterKind::External => "external",
        }
    }
}

impl fmt::Display for ForecasterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ForecasterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "iid" | "iid-bs" => Ok(ForecasterKind::Iid),
            "qboost" | "q-boost" => Ok(ForecasterKind::QBoost),
            "external" | "chronos" => Ok(ForecasterKind::External),
            other => Err(Error::Invalid(format!("unknown forecaster '{other}' (expected iid, qboost or external)"))),
        }
    }
}
