//! Time-series features of a factor return history: lags, rolling moments,
//! extremes, rates of change, z-scores, momentum and peer lags.

use crate::error::{Error, Result};

pub const N_FEATURES: usize = 37;

/// Longest window (90) plus one lag.
pub const MIN_HISTORY: usize = 91;

const LAGS: [usize; 4] = [1, 3, 5, 10];
const WINDOWS: [usize; 4] = [3, 5, 10, 20];
const Z_WINDOWS: [usize; 3] = [30, 60, 90];
const PEER_LAGS: [usize; 3] = [1, 3, 5];

#[rustfmt::skip]
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "lag_1", "lag_3", "lag_5", "lag_10",
    "ma_3", "ma_5", "ma_10", "ma_20",
    "std_3", "std_5", "std_10", "std_20",
    "min_3", "min_5", "min_10", "min_20",
    "max_3", "max_5", "max_10", "max_20",
    "roc_1", "roc_3", "roc_5", "roc_10",
    "z_30", "z_60", "z_90",
    "mom_5_20",
    "peer0_lag_1", "peer0_lag_3", "peer0_lag_5",
    "peer1_lag_1", "peer1_lag_3", "peer1_lag_5",
    "peer2_lag_1", "peer2_lag_3", "peer2_lag_5",
];

pub type FeatureVector = [f64; N_FEATURES];

fn window(r: &[f64], t: usize, m: usize) -> &[f64] {
    &r[t + 1 - m..=t]
}

fn rolling_mean(r: &[f64], t: usize, m: usize) -> f64 {
    window(r, t, m).iter().sum::<f64>() / m as f64
}

fn rolling_std(r: &[f64], t: usize, m: usize) -> f64 {
    let mu = rolling_mean(r, t, m);
    (window(r, t, m).iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
}

/// Features at index `t` of `series` (every entry at index `<= t` is
/// observed; nothing later is read). `peers` must cover index `t` as well.
///
/// Rates of change with a zero base and z-scores with zero dispersion are
/// set to 0.
pub fn build_features(series: &[f64], peers: [&[f64]; 3], t: usize) -> Result<FeatureVector> {
    if t >= series.len() || t + 1 < MIN_HISTORY {
        return Err(Error::InsufficientHistory { needed: MIN_HISTORY, have: (t + 1).min(series.len()) });
    }
    if peers.iter().any(|p| p.len() <= t) {
        return Err(Error::InsufficientHistory { needed: t + 1, have: peers.iter().map(|p| p.len()).min().unwrap_or(0) });
    }
    let r = series;
    let mut out = [0.0; N_FEATURES];
    let mut k = 0;
    let mut push = |v: f64| {
        out[k] = v;
        k += 1;
    };
    for &l in &LAGS {
        push(r[t - l]);
    }
    for &m in &WINDOWS {
        push(rolling_mean(r, t, m));
    }
    for &m in &WINDOWS {
        push(rolling_std(r, t, m));
    }
    for &m in &WINDOWS {
        push(window(r, t, m).iter().copied().fold(f64::INFINITY, f64::min));
    }
    for &m in &WINDOWS {
        push(window(r, t, m).iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    for &l in &LAGS {
        let base = r[t - l];
        push(if base.abs() < 1e-12 { 0.0 } else { r[t] / base - 1.0 });
    }
    for &m in &Z_WINDOWS {
        let sd = rolling_std(r, t, m);
        push(if sd < 1e-15 { 0.0 } else { (r[t] - rolling_mean(r, t, m)) / sd });
    }
    push(rolling_mean(r, t, 5) - rolling_mean(r, t, 20));
    for p in peers {
        for &l in &PEER_LAGS {
            push(p[t - l]);
        }
    }
    debug_assert_eq!(k, N_FEATURES);
    Ok(out)
}
