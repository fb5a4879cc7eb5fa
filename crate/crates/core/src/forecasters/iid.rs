use super::QuantileForecast;
use crate::error::{Error, Result};
use crate::linalg::quantile_sorted;
use crate::panel::Period;
use crate::rng::RngStream;

/// Bootstrap quantile levels.
pub const IID_LEVELS: [f64; 2] = [0.05, 0.95];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IidConfig {
    /// Number of bootstrap resamples.
    pub resamples: usize,
}

impl Default for IidConfig {
    fn default() -> Self {
        Self { resamples: 1000 }
    }
}

/// Sample-mean forecast with bootstrap quantiles of the mean.
///
/// `history` holds every observation up to and including the decision
/// period. Each of the `resamples` draws is a with-replacement resample of
/// the full history; the quantiles are empirical quantiles of the resample
/// means.
pub fn iid_bs_forecast(
    history: &[f64],
    factor_id: usize,
    target_period: Period,
    config: IidConfig,
    rng: &mut RngStream,
) -> Result<QuantileForecast> {
    let t = history.len();
    if t < 2 {
        return Err(Error::InsufficientHistory { needed: 2, have: t });
    }
    if config.resamples == 0 {
        return Err(Error::Invalid("bootstrap needs at least one resample".into()));
    }
    let central = history.iter().sum::<f64>() / t as f64;
    let mut means: Vec<f64> = (0..config.resamples)
        .map(|_| {
            let mut s = 0.0;
            for _ in 0..t {
                s += history[rng.index(t)];
            }
            s / t as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let quantiles = IID_LEVELS.iter().map(|&a| (a, quantile_sorted(&means, a))).collect();
    Ok(QuantileForecast { factor_id, target_period, central, quantiles })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_has_no_spread() {
        let h = vec![0.01; 50];
        let fc = iid_bs_forecast(&h, 0, 51, IidConfig::default(), &mut RngStream::new(1)).unwrap();
        assert!((fc.central - 0.01).abs() < 1e-15);
        for (_, v) in &fc.quantiles {
            assert!((v - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn central_is_sample_mean() {
        let fc = iid_bs_forecast(&[0.0, 0.0, 0.0, 1.0], 3, 5, IidConfig { resamples: 100 }, &mut RngStream::new(2)).unwrap();
        assert_eq!(fc.central, 0.25);
        assert_eq!(fc.factor_id, 3);
        assert!(fc.is_monotone());
    }

    #[test]
    fn tail_quantile_matches_clt() {
        let mut gen = RngStream::new(77);
        let sigma = 0.04;
        let h: Vec<f64> = (0..400).map(|_| sigma * gen.normal()).collect();
        let mean = h.iter().sum::<f64>() / 400.0;
        let sd = (h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 400.0).sqrt();
        let fc = iid_bs_forecast(&h, 0, 0, IidConfig { resamples: 10_000 }, &mut RngStream::new(3)).unwrap();
        let q95 = fc.quantile(0.95).unwrap() - fc.central;
        let expected = 1.645 * sigma / 20.0;
        assert!((q95 - expected).abs() / expected < 0.10, "{q95} vs {expected} (sample sd {sd})");
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let h: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let a = iid_bs_forecast(&h, 0, 0, IidConfig::default(), &mut RngStream::new(9)).unwrap();
        let b = iid_bs_forecast(&h, 0, 0, IidConfig::default(), &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_short_history_is_rejected() {
        assert!(iid_bs_forecast(&[0.1], 0, 0, IidConfig::default(), &mut RngStream::new(1)).is_err());
    }
}
