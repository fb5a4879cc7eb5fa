//! Exchange files shared with out-of-process forecasters.
//!
//! Forecasts: `target_period,factor_id,level,value` where `level` is a number
//! in (0, 1) or the literal `central`. Factor series: `period,factor_id,value`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use super::QuantileForecast;
use crate::error::{Error, Result};
use crate::io::{fmt_num, parse_num, read_csv, write_text, CsvTable};
use crate::panel::Period;

const EXCHANGE_HEADER: [&str; 4] = ["target_period", "factor_id", "level", "value"];
const SERIES_HEADER: [&str; 3] = ["period", "factor_id", "value"];

#[derive(Debug, Clone, PartialEq)]
pub enum ExchangeWarning {
    /// Quantile values decreased in level and were sorted.
    NonMonotoneQuantiles { target_period: Period, factor_id: usize },
}

fn check_header(path: &Path, table: &CsvTable, expected: &[&str]) -> Result<()> {
    if table.header.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(Error::malformed(path, 1, format!("expected header '{}'", expected.join(","))));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str, name: &str) -> Result<T> {
    s.parse().map_err(|_| Error::malformed(path, line, format!("bad {name} '{s}'")))
}

fn value(path: &Path, line: usize, s: &str) -> Result<f64> {
    match parse_num(s) {
        Some(v) if v.is_finite() => Ok(v),
        _ => Err(Error::malformed(path, line, format!("bad value '{s}'"))),
    }
}

#[derive(Default)]
struct Entry {
    central: Option<f64>,
    quantiles: Vec<(f64, f64)>,
}

/// Forecasts keyed by target period.
pub type ForecastsByPeriod = BTreeMap<Period, Vec<QuantileForecast>>;

/// Reads every target period in an exchange file. Each period must carry
/// forecasts for factors `0..expected_factors`.
pub fn read_exchange(path: &Path, expected_factors: usize) -> Result<(ForecastsByPeriod, Vec<ExchangeWarning>)> {
    let table = read_csv(path)?;
    check_header(path, &table, &EXCHANGE_HEADER)?;
    let mut raw: BTreeMap<Period, BTreeMap<usize, Entry>> = BTreeMap::new();
    for (line, f) in &table.rows {
        let line = *line;
        if f.len() != 4 {
            return Err(Error::malformed(path, line, format!("expected 4 fields, found {}", f.len())));
        }
        let period: Period = field(path, line, &f[0], "target_period")?;
        let factor: usize = field(path, line, &f[1], "factor_id")?;
        if factor >= expected_factors {
            return Err(Error::malformed(path, line, format!("factor_id {factor} out of range (expected < {expected_factors})")));
        }
        let v = value(path, line, &f[3])?;
        let entry = raw.entry(period).or_default().entry(factor).or_default();
        if f[2] == "central" {
            if entry.central.replace(v).is_some() {
                return Err(Error::malformed(path, line, "duplicate central entry"));
            }
            continue;
        }
        let level = match parse_num(&f[2]) {
            Some(a) if a > 0.0 && a < 1.0 => a,
            _ => return Err(Error::malformed(path, line, format!("bad level '{}'", f[2]))),
        };
        if entry.quantiles.iter().any(|q| (q.0 - level).abs() < 1e-12) {
            return Err(Error::malformed(path, line, format!("duplicate level {level}")));
        }
        entry.quantiles.push((level, v));
    }

    let mut out = BTreeMap::new();
    let mut warnings = Vec::new();
    for (period, factors) in raw {
        let mut fcs = Vec::with_capacity(expected_factors);
        for k in 0..expected_factors {
            let Some(e) = factors.get(&k) else {
                return Err(Error::MissingFactor { factor: k, period });
            };
            let mut fc = QuantileForecast { factor_id: k, target_period: period, central: 0.0, quantiles: e.quantiles.clone() };
            if fc.enforce_monotone() {
                warn!("{}: non-monotone quantiles for factor {k} at period {period}, sorted", path.display());
                warnings.push(ExchangeWarning::NonMonotoneQuantiles { target_period: period, factor_id: k });
            }
            fc.central = match (fc.quantile(0.5), e.central) {
                (Some(m), _) => m,
                (None, Some(c)) => c,
                (None, None) => {
                    return Err(Error::malformed(path, 0, format!("factor {k} at period {period} has neither level 0.5 nor central")))
                }
            };
            fcs.push(fc);
        }
        out.insert(period, fcs);
    }
    Ok((out, warnings))
}

/// Forecasts for one target period, one per factor in id order.
pub fn load_exchange(path: &Path, expected_factors: usize, target_period: Period) -> Result<(Vec<QuantileForecast>, Vec<ExchangeWarning>)> {
    let (mut all, warnings) = read_exchange(path, expected_factors)?;
    let fcs = all.remove(&target_period).ok_or(Error::MissingFactor { factor: 0, period: target_period })?;
    let warnings = warnings
        .into_iter()
        .filter(|w| matches!(w, ExchangeWarning::NonMonotoneQuantiles { target_period: p, .. } if *p == target_period))
        .collect();
    Ok((fcs, warnings))
}

/// Writes forecasts in exchange format. A `central` row is emitted only
/// when the level set lacks 0.5.
pub fn write_exchange(path: &Path, forecasts: &[QuantileForecast]) -> Result<()> {
    let mut out = EXCHANGE_HEADER.join(",");
    out.push('\n');
    for fc in forecasts {
        for (a, v) in &fc.quantiles {
            writeln!(out, "{},{},{},{}", fc.target_period, fc.factor_id, fmt_num(*a), fmt_num(*v)).unwrap();
        }
        if fc.quantile(0.5).is_none() {
            writeln!(out, "{},{},central,{}", fc.target_period, fc.factor_id, fmt_num(fc.central)).unwrap();
        }
    }
    write_text(path, &out)
}

/// Writes `series[k][i]` as the value of factor `k` at `periods[i]`.
pub fn write_factor_series(path: &Path, periods: &[Period], series: &[Vec<f64>]) -> Result<()> {
    if series.iter().any(|s| s.len() != periods.len()) {
        return Err(Error::Shape("factor series length differs from period count".into()));
    }
    let mut out = SERIES_HEADER.join(",");
    out.push('\n');
    for (i, p) in periods.iter().enumerate() {
        for (k, s) in series.iter().enumerate() {
            writeln!(out, "{p},{k},{}", fmt_num(s[i])).unwrap();
        }
    }
    write_text(path, &out)
}

/// Reads a factor-series file into sorted periods and per-factor series.
/// Every period must list every factor id `0..K`.
pub fn read_factor_series(path: &Path) -> Result<(Vec<Period>, Vec<Vec<f64>>)> {
    let table = read_csv(path)?;
    check_header(path, &table, &SERIES_HEADER)?;
    let mut raw: BTreeMap<Period, BTreeMap<usize, f64>> = BTreeMap::new();
    let mut n_factors = 0;
    for (line, f) in &table.rows {
        let line = *line;
        if f.len() != 3 {
            return Err(Error::malformed(path, line, format!("expected 3 fields, found {}", f.len())));
        }
        let period: Period = field(path, line, &f[0], "period")?;
        let factor: usize = field(path, line, &f[1], "factor_id")?;
        let v = value(path, line, &f[2])?;
        if raw.entry(period).or_default().insert(factor, v).is_some() {
            return Err(Error::malformed(path, line, format!("duplicate factor {factor} at period {period}")));
        }
        n_factors = n_factors.max(factor + 1);
    }
    let periods: Vec<Period> = raw.keys().copied().collect();
    let mut series = vec![Vec::with_capacity(periods.len()); n_factors];
    for (p, row) in &raw {
        for (k, s) in series.iter_mut().enumerate() {
            s.push(*row.get(&k).ok_or(Error::MissingFactor { factor: k, period: *p })?);
        }
    }
    Ok((periods, series))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

    fn fc(k: usize, base: f64) -> QuantileForecast {
        QuantileForecast {
            factor_id: k,
            target_period: 7,
            central: base + 0.005,
            quantiles: LEVELS.iter().enumerate().map(|(i, a)| (*a, ((base + 0.001 * i as f64) * 1e6).round() / 1e6)).collect(),
        }
    }

    #[test]
    fn flat_file_has_zero_spread() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let mut s = String::from("target_period,factor_id,level,value\n");
        for a in LEVELS {
            s += &format!("3,0,{a},0.02\n");
        }
        std::fs::write(&p, s).unwrap();
        let (fcs, w) = load_exchange(&p, 1, 3).unwrap();
        assert!(w.is_empty());
        assert_eq!(fcs[0].central, 0.02);
        assert!(fcs[0].quantiles.iter().all(|q| q.1 == 0.02));
        assert_eq!(fcs[0].quantiles.len(), 9);
    }

    #[test]
    fn round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let fcs = vec![fc(0, 0.01), fc(1, -0.02)];
        let mut expected = fcs.clone();
        for f in &mut expected {
            f.central = f.quantile(0.5).unwrap();
        }
        write_exchange(&p, &fcs).unwrap();
        let (back, w) = load_exchange(&p, 2, 7).unwrap();
        assert!(w.is_empty());
        assert_eq!(back, expected);

        let two = vec![QuantileForecast { factor_id: 0, target_period: 2, central: 0.125, quantiles: vec![(0.05, -0.5), (0.95, 0.75)] }];
        write_exchange(&p, &two).unwrap();
        assert_eq!(load_exchange(&p, 1, 2).unwrap().0, two);
    }

    #[test]
    fn shuffled_levels_match_sorted_file() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_exchange(&a, &[fc(0, 0.0)]).unwrap();
        let text = std::fs::read_to_string(&a).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        lines.reverse();
        lines.swap(2, 6);
        std::fs::write(&b, format!("{header}\n{}\n", lines.join("\n"))).unwrap();
        assert_eq!(load_exchange(&a, 1, 7).unwrap(), load_exchange(&b, 1, 7).unwrap());
    }

    #[test]
    fn non_monotone_values_warn_and_sort() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "target_period,factor_id,level,value\n1,0,0.1,0.3\n1,0,0.5,0.1\n1,0,0.9,0.2\n").unwrap();
        let (fcs, w) = load_exchange(&p, 1, 1).unwrap();
        assert_eq!(w, vec![ExchangeWarning::NonMonotoneQuantiles { target_period: 1, factor_id: 0 }]);
        assert_eq!(fcs[0].quantiles, vec![(0.1, 0.1), (0.5, 0.2), (0.9, 0.3)]);
        assert_eq!(fcs[0].central, 0.2);
    }

    #[test]
    fn missing_factor_and_bad_rows_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_exchange(&p, &[fc(0, 0.0)]).unwrap();
        assert!(matches!(load_exchange(&p, 2, 7), Err(Error::MissingFactor { factor: 1, period: 7 })));
        std::fs::write(&p, "target_period,factor_id,level,value\n1,0,0.5,abc\n").unwrap();
        assert!(matches!(load_exchange(&p, 1, 1), Err(Error::MalformedRow { line: 2, .. })));
        std::fs::write(&p, "target_period,factor_id,level,value\n1,0,1.5,0.1\n").unwrap();
        assert!(matches!(load_exchange(&p, 1, 1), Err(Error::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn factor_series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let periods = vec![5, 6, 7];
        let series = vec![vec![0.01, -0.02, 0.5], vec![1e-7, 0.0, -3.25]];
        write_factor_series(&p, &periods, &series).unwrap();
        assert_eq!(read_factor_series(&p).unwrap(), (periods, series));
    }
}
