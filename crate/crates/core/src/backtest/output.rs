//! Ledger, weight and ranking files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{BacktestResult, Book, LedgerRow, RankRecord, StrategyKind};
use crate::adaptive::write_traces;
use crate::error::{Error, Result};
use crate::io::{fmt_num, parse_num, read_csv, write_text};
use crate::panel::Period;

const LEDGER_HEADER: &str = "period,gross,net,turnover,kappa";

/// `period,gross,net,turnover,kappa`, one row per realised period.
pub fn write_ledger(path: &Path, rows: &[LedgerRow]) -> Result<()> {
    let mut out = format!("{LEDGER_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.period, fmt_num(r.gross), fmt_num(r.net), fmt_num(r.turnover), r.kappa).unwrap();
    }
    write_text(path, &out)
}

pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRow>> {
    let table = read_csv(path)?;
    if table.header.join(",") != LEDGER_HEADER {
        return Err(Error::malformed(path, 1, format!("expected header '{LEDGER_HEADER}'")));
    }
    table
        .rows
        .iter()
        .map(|(line, f)| {
            let bad = |m: &str| Error::malformed(path, *line, m.to_string());
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let num = |i: usize| parse_num(&f[i]).filter(|v| v.is_finite()).ok_or_else(|| bad(&format!("bad number '{}'", f[i])));
            Ok(LedgerRow {
                period: f[0].parse().map_err(|_| bad("bad period"))?,
                gross: num(1)?,
                net: num(2)?,
                turnover: num(3)?,
                kappa: f[4].parse().map_err(|_| bad("bad kappa"))?,
            })
        })
        .collect()
}

/// `period,asset_id,weight` with the book held during each period.
pub fn write_weights(path: &Path, weights: &[(Period, Book)]) -> Result<()> {
    let mut out = String::from("period,asset_id,weight\n");
    for (p, book) in weights {
        for (a, w) in book {
            writeln!(out, "{p},{a},{}", fmt_num(*w)).unwrap();
        }
    }
    write_text(path, &out)
}

/// `period,model,rank,factor_id,uncertainty`, rank 1 = least uncertain.
pub fn write_rankings(path: &Path, rankings: &[RankRecord]) -> Result<()> {
    let mut out = String::from("period,model,rank,factor_id,uncertainty\n");
    for r in rankings {
        for (i, k) in r.ranked.iter().enumerate() {
            writeln!(out, "{},{},{},{k},{}", r.period, r.forecaster, i + 1, fmt_num(r.uncertainty[*k])).unwrap();
        }
    }
    write_text(path, &out)
}

/// `period,value` series.
pub fn write_series(path: &Path, header: &str, series: &[(Period, f64)]) -> Result<()> {
    let mut out = format!("period,{header}\n");
    for (p, v) in series {
        writeln!(out, "{p},{}", fmt_num(*v)).unwrap();
    }
    write_text(path, &out)
}

/// Reads a two-column `period,value` file with any header names.
pub fn read_series(path: &Path) -> Result<Vec<(Period, f64)>> {
    let table = read_csv(path)?;
    if table.header.len() != 2 {
        return Err(Error::malformed(path, 1, "expected two columns: period,value"));
    }
    table
        .rows
        .iter()
        .map(|(line, f)| {
            let bad = |m: &str| Error::malformed(path, *line, m.to_string());
            if f.len() != 2 {
                return Err(bad("expected 2 fields"));
            }
            let p = f[0].parse().map_err(|_| bad("bad period"))?;
            let v = parse_num(&f[1]).filter(|v| v.is_finite()).ok_or_else(|| bad(&format!("bad number '{}'", f[1])))?;
            Ok((p, v))
        })
        .collect()
}

/// One strategy as stored in a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredStrategy {
    pub name: String,
    /// `fixed`, `adaptive`, `ensemble_a` or `ensemble_b`.
    pub kind: String,
    pub forecaster: Option<String>,
    /// Subset size of fixed strategies.
    pub kappa: Option<usize>,
    pub rows: Vec<LedgerRow>,
}

const INDEX_HEADER: &str = "name,kind,forecaster,kappa";

/// Writes every artifact of a run under `dir` and returns their paths:
/// `strategies.csv` (the index), `ledgers/<name>.csv`, `weights/<name>.csv`,
/// `benchmark.csv`, `rankings.csv` and `kappa_trace.csv`.
pub fn write_result(dir: &Path, result: &BacktestResult) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut index = format!("{INDEX_HEADER}\n");
    for s in &result.strategies {
        let (kind, kappa) = match s.kind {
            StrategyKind::Fixed(k) => ("fixed", k.to_string()),
            StrategyKind::Adaptive => ("adaptive", String::new()),
            StrategyKind::EnsembleA => ("ensemble_a", String::new()),
            StrategyKind::EnsembleB => ("ensemble_b", String::new()),
        };
        let f = s.forecaster.map(|f| f.to_string()).unwrap_or_default();
        writeln!(index, "{},{kind},{f},{kappa}", s.name).unwrap();
        let p = dir.join("ledgers").join(format!("{}.csv", s.name));
        write_ledger(&p, &s.rows)?;
        files.push(p);
        if let Some(w) = &s.weights {
            let p = dir.join("weights").join(format!("{}.csv", s.name));
            write_weights(&p, w)?;
            files.push(p);
        }
    }
    let p = dir.join("strategies.csv");
    write_text(&p, &index)?;
    files.insert(0, p);
    for (name, res) in [
        ("benchmark.csv", write_series(&dir.join("benchmark.csv"), "return", &result.benchmark)),
        ("rankings.csv", write_rankings(&dir.join("rankings.csv"), &result.rankings)),
        ("kappa_trace.csv", write_traces(&dir.join("kappa_trace.csv"), &result.traces)),
    ] {
        res?;
        files.push(dir.join(name));
    }
    Ok(files)
}

/// Reads the strategy index and ledgers written by [`write_result`].
pub fn read_result(dir: &Path) -> Result<Vec<StoredStrategy>> {
    let path = dir.join("strategies.csv");
    let table = read_csv(&path)?;
    if table.header.join(",") != INDEX_HEADER {
        return Err(Error::malformed(&path, 1, format!("expected header '{INDEX_HEADER}'")));
    }
    table
        .rows
        .iter()
        .map(|(line, f)| {
            if f.len() != 4 || f[0].is_empty() {
                return Err(Error::malformed(&path, *line, "expected 4 fields and a name"));
            }
            let kappa = if f[3].is_empty() { None } else { Some(f[3].parse().map_err(|_| Error::malformed(&path, *line, "bad kappa"))?) };
            Ok(StoredStrategy {
                name: f[0].clone(),
                kind: f[1].clone(),
                forecaster: (!f[2].is_empty()).then(|| f[2].clone()),
                kappa,
                rows: read_ledger(&dir.join("ledgers").join(format!("{}.csv", f[0])))?,
            })
        })
        .collect()
}
