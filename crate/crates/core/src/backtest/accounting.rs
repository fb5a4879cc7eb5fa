//! Weight drift, turnover, transaction costs and per-strategy ledgers.

use std::collections::BTreeMap;

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::panel::{AssetId, Period};

/// Sparse asset weights keyed by asset id.
pub type Book = BTreeMap<AssetId, f64>;

/// Smallest admissible portfolio or leg value when drifting weights.
pub const MIN_PORTFOLIO_VALUE: f64 = 1e-6;
/// Turnover above this is logged as a violation of the gross-2 bound.
pub const TURNOVER_WARN: f64 = 4.5;

fn drift_slice(w: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    let grown: Vec<f64> = w.iter().zip(r).map(|(w, r)| w * (1.0 + r)).collect();
    let has_long = w.iter().any(|v| *v > 0.0);
    let has_short = w.iter().any(|v| *v < 0.0);
    if has_long && has_short {
        let long: f64 = grown.iter().zip(w).filter(|(_, w)| **w > 0.0).map(|(g, _)| *g).sum();
        let short: f64 = -grown.iter().zip(w).filter(|(_, w)| **w < 0.0).map(|(g, _)| *g).sum::<f64>();
        if long < MIN_PORTFOLIO_VALUE {
            return Err(Error::DegeneratePortfolioValue(long));
        }
        if short < MIN_PORTFOLIO_VALUE {
            return Err(Error::DegeneratePortfolioValue(short));
        }
        Ok(grown
            .iter()
            .zip(w)
            .map(|(g, w)| {
                if *w > 0.0 {
                    g / long
                } else if *w < 0.0 {
                    g / short
                } else {
                    0.0
                }
            })
            .collect())
    } else {
        let total: f64 = grown.iter().sum();
        if total.abs() < MIN_PORTFOLIO_VALUE {
            return Err(Error::DegeneratePortfolioValue(total));
        }
        Ok(grown.iter().map(|g| g / total.abs()).collect())
    }
}

/// Pre-rebalance weights after one period of returns. A book with both a
/// long and a short leg drifts leg by leg, each leg re-expressed per unit
/// of its own capital; otherwise weights grow by `1 + r` and are divided by
/// the total value.
pub fn drift_weights(w_prev: &Vector, returns: &Vector) -> Result<Vector> {
    if w_prev.len() != returns.len() {
        return Err(Error::Shape(format!("{} weights, {} returns", w_prev.len(), returns.len())));
    }
    Ok(Vector::from_vec(drift_slice(w_prev.as_slice(), returns.as_slice())?))
}

/// [`drift_weights`] on a sparse book; `ret` supplies each asset's return
/// (assets without one earn zero).
pub fn drift_book(book: &Book, ret: impl Fn(AssetId) -> Option<f64>) -> Result<Book> {
    if book.is_empty() {
        return Ok(Book::new());
    }
    let ids: Vec<AssetId> = book.keys().copied().collect();
    let w: Vec<f64> = book.values().copied().collect();
    let r: Vec<f64> = ids.iter().map(|&a| ret(a).unwrap_or(0.0)).collect();
    Ok(ids.into_iter().zip(drift_slice(&w, &r)?).collect())
}

/// `sum |w_dagger - w_new|`.
pub fn turnover(w_dagger: &Vector, w_new: &Vector) -> f64 {
    (w_dagger - w_new).abs().sum()
}

/// Turnover over the union of both books (missing ids count as zero).
pub fn book_turnover(w_dagger: &Book, w_new: &Book) -> f64 {
    let mut to = 0.0;
    for (a, w) in w_dagger {
        to += (w - w_new.get(a).copied().unwrap_or(0.0)).abs();
    }
    for (a, w) in w_new {
        if !w_dagger.contains_key(a) {
            to += w.abs();
        }
    }
    to
}

/// `(1 - cost * TO)(1 + gross) - 1`, evaluated as
/// `gross - cost * TO * (1 + gross)` so that zero cost returns `gross` exactly.
pub fn net_return(gross: f64, turnover: f64, cost: f64) -> Result<f64> {
    let c = cost * turnover;
    if c >= 1.0 {
        return Err(Error::CostExceedsCapital(c));
    }
    Ok(gross - c * (1.0 + gross))
}

/// `sum_a w_a r_a`.
pub fn book_return(book: &Book, ret: impl Fn(AssetId) -> Option<f64>) -> f64 {
    book.iter().map(|(a, w)| w * ret(*a).unwrap_or(0.0)).sum()
}

pub fn book_from_vector(assets: &[AssetId], w: &Vector) -> Book {
    assets.iter().zip(w.iter()).filter(|(_, w)| **w != 0.0).map(|(a, w)| (*a, *w)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    /// Period whose return is realised.
    pub period: Period,
    pub gross: f64,
    pub net: f64,
    /// Turnover of the rebalance made at the end of the previous period.
    pub turnover: f64,
    /// Number of factors behind the book (0 for ensembles).
    pub kappa: usize,
}

/// Running state of one strategy.
#[derive(Debug, Clone)]
pub struct Account {
    drifted: Book,
    held: Book,
    pub rows: Vec<LedgerRow>,
    pub weights: Option<Vec<(Period, Book)>>,
    name: String,
}

impl Account {
    pub fn new(name: impl Into<String>, record_weights: bool) -> Self {
        Self { drifted: Book::new(), held: Book::new(), rows: Vec::new(), weights: record_weights.then(Vec::new), name: name.into() }
    }

    /// Current pre-rebalance weights.
    pub fn drifted(&self) -> &Book {
        &self.drifted
    }

    /// Weights chosen at the latest rebalance.
    pub fn held(&self) -> &Book {
        &self.held
    }

    pub fn gross_returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gross).collect()
    }

    /// Rebalances into `new` (or keeps the drifted book when `None`) and
    /// realises `period` using `ret`.
    pub fn step(&mut self, new: Option<Book>, kappa: usize, period: Period, cost: f64, ret: impl Fn(AssetId) -> Option<f64>) -> Result<()> {
        let book = new.unwrap_or_else(|| self.drifted.clone());
        let to = book_turnover(&self.drifted, &book);
        if to > TURNOVER_WARN {
            warn!("{}: turnover {to} at period {period} exceeds {TURNOVER_WARN}", self.name);
        }
        let gross = book_return(&book, &ret);
        let net = net_return(gross, to, cost)?;
        self.drifted = drift_book(&book, &ret)?;
        if let Some(w) = self.weights.as_mut() {
            w.push((period, book.clone()));
        }
        self.held = book;
        self.rows.push(LedgerRow { period, gross, net, turnover: to, kappa });
        Ok(())
    }
}
