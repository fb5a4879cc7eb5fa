//! Performance tables, plot data and run manifests.
//!
//! The table has one column per strategy (plus the benchmark) and rows named
//! like the published performance table: gross statistics, statistics net
//! of transaction costs and, when a factor file is given, expanding alpha
//! regressions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::backtest::StoredStrategy;
use crate::config::sha256_hex;
use crate::error::{Error, Result};
use crate::io::{fmt_num, parse_num, read_csv, write_text};
use crate::metrics::{expanding_alpha_regression, perf_report, AlphaStep, PerfReport};
use crate::panel::Period;

pub const BENCHMARK_COLUMN: &str = "benchmark";

/// Optional series aligned by period with the strategies.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub benchmark: Option<Vec<(Period, f64)>>,
    pub risk_free: Option<Vec<(Period, f64)>>,
    /// Regression factors in the order they enter.
    pub factors: Vec<(String, Vec<(Period, f64)>)>,
}

#[derive(Debug, Clone)]
pub struct ReportColumn {
    pub name: String,
    pub gross: PerfReport,
    /// `None` for the benchmark.
    pub net: Option<PerfReport>,
    pub alphas: Option<Vec<AlphaStep>>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub periods: Vec<Period>,
    pub columns: Vec<ReportColumn>,
}

fn align(name: &str, series: &[(Period, f64)], periods: &[Period]) -> Result<Vec<f64>> {
    let map: BTreeMap<Period, f64> = series.iter().copied().collect();
    periods
        .iter()
        .map(|p| map.get(p).copied().ok_or_else(|| Error::InsufficientData(format!("{name} has no value for period {p}"))))
        .collect()
}

/// Computes every column. All strategies must cover the same periods.
pub fn build_report(strategies: &[StoredStrategy], inputs: &ReportInputs) -> Result<Report> {
    let first = strategies.first().ok_or_else(|| Error::InsufficientData("no strategies to report".into()))?;
    let periods: Vec<Period> = first.rows.iter().map(|r| r.period).collect();
    if let Some(s) = strategies.iter().find(|s| s.rows.iter().map(|r| r.period).ne(periods.iter().copied())) {
        return Err(Error::Shape(format!("strategy '{}' covers different periods than '{}'", s.name, first.name)));
    }
    let bench = inputs.benchmark.as_ref().map(|b| align(BENCHMARK_COLUMN, b, &periods)).transpose()?;
    let rf = inputs.risk_free.as_ref().map(|b| align("risk-free series", b, &periods)).transpose()?;
    let factors: Vec<(String, Vec<f64>)> =
        inputs.factors.iter().map(|(n, s)| Ok((n.clone(), align(n, s, &periods)?))).collect::<Result<_>>()?;

    let mut columns = Vec::with_capacity(strategies.len() + 1);
    for s in strategies {
        let gross: Vec<f64> = s.rows.iter().map(|r| r.gross).collect();
        let net: Vec<f64> = s.rows.iter().map(|r| r.net).collect();
        let to: Vec<f64> = s.rows.iter().map(|r| r.turnover).collect();
        let alphas = if factors.is_empty() {
            None
        } else {
            let excess: Vec<f64> = match &rf {
                Some(rf) => gross.iter().zip(rf).map(|(r, f)| r - f).collect(),
                None => gross.clone(),
            };
            Some(expanding_alpha_regression(&excess, &factors)?)
        };
        columns.push(ReportColumn {
            name: s.name.clone(),
            gross: perf_report(&gross, bench.as_deref(), rf.as_deref(), Some(&to))?,
            net: Some(perf_report(&net, bench.as_deref(), rf.as_deref(), Some(&to))?),
            alphas,
        });
    }
    if let Some(b) = &bench {
        columns.push(ReportColumn {
            name: BENCHMARK_COLUMN.into(),
            gross: perf_report(b, Some(b), rf.as_deref(), None)?,
            net: None,
            alphas: None,
        });
    }
    Ok(Report { periods, columns })
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

type Getter = fn(&PerfReport) -> Option<f64>;

const PERF_ROWS: [(&str, Getter); 11] = [
    ("Total Return (%)", |p| Some(pct(p.total_return))),
    ("CAGR (%)", |p| Some(pct(p.cagr))),
    ("Sharpe Ratio", |p| Some(p.sharpe)),
    ("Sortino Ratio", |p| Some(p.sortino)),
    ("Omega Ratio", |p| Some(p.omega)),
    ("Annual Return (%)", |p| Some(pct(p.annual_return))),
    ("Annual Volatility (%)", |p| Some(pct(p.annual_vol))),
    ("Max Drawdown (%)", |p| Some(pct(p.max_drawdown))),
    ("Market Beta", |p| p.beta),
    ("Market Alpha (%)", |p| p.alpha_annualized.map(pct)),
    ("Monthly Turnover", |p| p.avg_monthly_turnover),
];

/// `(panel, row label, value per column)`; `None` renders as empty.
pub fn table_rows(report: &Report) -> Vec<(&'static str, String, Vec<Option<f64>>)> {
    let mut rows = Vec::new();
    for (label, get) in PERF_ROWS {
        rows.push(("gross", label.to_string(), report.columns.iter().map(|c| get(&c.gross)).collect()));
    }
    for (label, get) in PERF_ROWS {
        rows.push(("net", label.to_string(), report.columns.iter().map(|c| c.net.as_ref().and_then(get)).collect()));
    }
    let steps = report.columns.iter().find_map(|c| c.alphas.as_ref()).map_or(0, |a| a.len());
    for i in 0..steps {
        let step = |c: &ReportColumn| c.alphas.as_ref().map(|a| a[i].clone());
        let label = match report.columns.iter().find_map(step).and_then(|s| s.added) {
            Some(name) => format!("+ {name}"),
            None => "Monthly Alpha (%)".into(),
        };
        rows.push(("alpha", label, report.columns.iter().map(|c| step(c).map(|s| pct(s.alpha))).collect()));
        rows.push(("alpha", "t-stat".into(), report.columns.iter().map(|c| step(c).map(|s| s.t_stat)).collect()));
    }
    if steps > 0 {
        rows.push(("alpha", "Final R2".into(), report.columns.iter().map(|c| c.alphas.as_ref().map(|a| a[steps - 1].r2)).collect()));
    }
    rows
}

/// `panel,metric,<column>...` with 12 significant digits.
pub fn report_csv(report: &Report) -> String {
    let mut out = String::from("panel,metric");
    for c in &report.columns {
        write!(out, ",{}", c.name).unwrap();
    }
    out.push('\n');
    for (panel, label, vals) in table_rows(report) {
        write!(out, "{panel},{label}").unwrap();
        for v in vals {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&fmt_num(v));
            }
        }
        out.push('\n');
    }
    out
}

/// Fixed-width text rendering of [`table_rows`].
pub fn report_text(report: &Report) -> String {
    let rows = table_rows(report);
    let cell = |v: &Option<f64>| v.map_or_else(|| "--".to_string(), |x| format!("{x:.3}"));
    let label_w = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(6);
    let widths: Vec<usize> = report
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| rows.iter().map(|r| cell(&r.2[j]).len()).max().unwrap_or(0).max(c.name.len()))
        .collect();
    let mut out = String::new();
    let mut panel = "";
    for (p, label, vals) in &rows {
        if *p != panel {
            panel = p;
            let title = match *p {
                "gross" => "Performance before transaction costs",
                "net" => "Performance net of transaction costs",
                _ => "Monthly alphas from expanding factor regressions",
            };
            if !out.is_empty() {
                out.push('\n');
            }
            writeln!(out, "{title} ({} periods)", report.periods.len()).unwrap();
            write!(out, "{:label_w$}", "").unwrap();
            for (c, w) in report.columns.iter().zip(&widths) {
                write!(out, "  {:>w$}", c.name).unwrap();
            }
            out.push('\n');
        }
        write!(out, "{label:label_w$}").unwrap();
        for (v, w) in vals.iter().zip(&widths) {
            write!(out, "  {:>w$}", cell(v)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// `period,<strategy>...` cumulative wealth (starting at 1) of net returns,
/// plus the benchmark when given.
pub fn wealth_csv(strategies: &[StoredStrategy], benchmark: Option<&[(Period, f64)]>) -> Result<String> {
    let periods: Vec<Period> = strategies.first().map(|s| s.rows.iter().map(|r| r.period).collect()).unwrap_or_default();
    let mut cols: Vec<(String, Vec<f64>)> = strategies.iter().map(|s| (s.name.clone(), s.rows.iter().map(|r| r.net).collect())).collect();
    if let Some(b) = benchmark {
        cols.push((BENCHMARK_COLUMN.into(), align(BENCHMARK_COLUMN, b, &periods)?));
    }
    let mut out = String::from("period");
    for (n, _) in &cols {
        write!(out, ",{n}").unwrap();
    }
    out.push('\n');
    let mut wealth = vec![1.0; cols.len()];
    for (i, p) in periods.iter().enumerate() {
        write!(out, "{p}").unwrap();
        for (w, (_, r)) in wealth.iter_mut().zip(&cols) {
            *w *= 1.0 + r[i];
            write!(out, ",{}", fmt_num(*w)).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// `forecaster,kappa,annual_return,annual_vol,sharpe` over the fixed-size
/// strategies, net of costs.
pub fn frontier_csv(strategies: &[StoredStrategy], report: &Report) -> String {
    let mut out = String::from("forecaster,kappa,annual_return,annual_vol,sharpe\n");
    for s in strategies {
        if let (Some(f), Some(k)) = (&s.forecaster, s.kappa) {
            if let Some(net) = report.columns.iter().find(|c| c.name == s.name).and_then(|c| c.net.as_ref()) {
                writeln!(out, "{f},{k},{},{},{}", fmt_num(net.annual_return), fmt_num(net.annual_vol), fmt_num(net.sharpe)).unwrap();
            }
        }
    }
    out
}

/// Named series in column order.
pub type FactorTable = Vec<(String, Vec<(Period, f64)>)>;

/// Reads `period,<name>...` into one named series per column.
pub fn read_factor_table(path: &Path) -> Result<FactorTable> {
    let table = read_csv(path)?;
    if table.header.len() < 2 || table.header[0] != "period" {
        return Err(Error::malformed(path, 1, "expected header 'period,<factor>,...'"));
    }
    let mut cols: Vec<(String, Vec<(Period, f64)>)> = table.header[1..].iter().map(|n| (n.clone(), Vec::new())).collect();
    for (line, f) in &table.rows {
        if f.len() != table.header.len() {
            return Err(Error::malformed(path, *line, format!("expected {} fields", table.header.len())));
        }
        let p: Period = f[0].parse().map_err(|_| Error::malformed(path, *line, "bad period"))?;
        for (j, c) in cols.iter_mut().enumerate() {
            let v = parse_num(&f[j + 1])
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::malformed(path, *line, format!("bad number '{}'", f[j + 1])))?;
            c.1.push((p, v));
        }
    }
    Ok(cols)
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestArtifact {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to the artifacts of every command.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub rng: String,
    pub config_sha256: String,
    pub artifacts: Vec<ManifestArtifact>,
    /// Fully resolved configuration text.
    pub config: String,
}

impl Manifest {
    pub fn new(command: &str, config: &crate::config::RunConfig) -> Self {
        Self {
            tool: "factorlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            rng: crate::rng::ALGORITHM.into(),
            config_sha256: config.hash(),
            artifacts: Vec::new(),
            config: config.to_text(),
        }
    }

    /// Records `files` with their digests, as paths relative to `root`.
    pub fn add(&mut self, root: &Path, files: &[PathBuf]) -> Result<()> {
        for f in files {
            let bytes = std::fs::read(f).map_err(|e| Error::io(f, e))?;
            let rel = f.strip_prefix(root).unwrap_or(f);
            self.artifacts.push(ManifestArtifact { path: rel.display().to_string(), sha256: sha256_hex(&bytes) });
        }
        Ok(())
    }

    /// Writes `manifest-<command>.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("manifest-{}.json", self.command));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(format!("manifest: {e}")))?;
        write_text(&path, &(text + "\n"))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::LedgerRow;

    fn strat(name: &str, kappa: Option<usize>, r: &[f64]) -> StoredStrategy {
        StoredStrategy {
            name: name.into(),
            kind: if kappa.is_some() { "fixed".into() } else { "adaptive".into() },
            forecaster: Some("iid".into()),
            kappa,
            rows: r
                .iter()
                .enumerate()
                .map(|(i, &g)| LedgerRow { period: i as Period + 1, gross: g, net: g - 0.001, turnover: 1.0, kappa: kappa.unwrap_or(2) })
                .collect(),
        }
    }

    fn series(n: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..n).map(f).collect()
    }

    #[test]
    fn table_has_named_rows_and_benchmark_column() {
        let a = strat("iid_k1", Some(1), &series(24, |i| 0.01 + 0.02 * ((i % 3) as f64 - 1.0)));
        let b = strat("iid_adaptive", None, &series(24, |i| 0.005 * (i % 2) as f64));
        let bench: Vec<(Period, f64)> = (1..=24).map(|p| (p, 0.01 * ((p % 4) as f64 - 1.5))).collect();
        let inputs = ReportInputs { benchmark: Some(bench), ..Default::default() };
        let rep = build_report(&[a.clone(), b.clone()], &inputs).unwrap();
        let csv = report_csv(&rep);
        assert!(csv.starts_with("panel,metric,iid_k1,iid_adaptive,benchmark\n"));
        for label in ["Total Return (%)", "Sharpe Ratio", "Sortino Ratio", "Omega Ratio", "Max Drawdown (%)", "Market Beta"] {
            assert!(csv.contains(&format!("gross,{label},")), "{label}");
        }
        let beta_row = csv.lines().find(|l| l.starts_with("gross,Market Beta")).unwrap();
        assert!(beta_row.ends_with(",1"), "{beta_row}");
        // net of costs is empty for the benchmark
        assert!(csv.lines().find(|l| l.starts_with("net,Sharpe Ratio")).unwrap().ends_with(','));
        let total = rep.columns[0].gross.total_return;
        let direct: f64 = a.rows.iter().map(|r| 1.0 + r.gross).product::<f64>() - 1.0;
        assert!((total - direct).abs() < 1e-12);
        let txt = report_text(&rep);
        assert!(txt.contains("Performance net of transaction costs"));
        let fr = frontier_csv(&[a.clone(), b.clone()], &rep);
        assert_eq!(fr.lines().count(), 2);
        let w = wealth_csv(&[a, b], inputs.benchmark.as_deref()).unwrap();
        assert_eq!(w.lines().count(), 25);
    }

    #[test]
    fn alpha_panel_rows() {
        let f1 = series(36, |i| ((i * 7) % 11) as f64 / 100.0 - 0.05);
        let r: Vec<f64> = f1.iter().map(|v| 0.01 + 0.5 * v).collect();
        let a = strat("x", Some(1), &r);
        let inputs = ReportInputs {
            factors: vec![("MKT".into(), f1.iter().enumerate().map(|(i, v)| (i as Period + 1, *v)).collect())],
            ..Default::default()
        };
        let rep = build_report(&[a], &inputs).unwrap();
        let csv = report_csv(&rep);
        let row = csv.lines().find(|l| l.starts_with("alpha,+ MKT")).unwrap();
        let v: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        assert!(csv.contains("alpha,Final R2,1"));
    }

    #[test]
    fn misaligned_strategies_are_rejected() {
        let a = strat("a", Some(1), &[0.01; 12]);
        let mut b = strat("b", Some(2), &[0.01; 12]);
        b.rows[3].period = 99;
        assert!(build_report(&[a.clone(), b], &ReportInputs::default()).is_err());
        let short = ReportInputs { benchmark: Some(vec![(1, 0.0)]), ..Default::default() };
        assert!(matches!(build_report(&[a], &short), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn factor_table_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ff.csv");
        std::fs::write(&p, "period,MKT,SMB\n1,0.01,0.002\n2,-0.02,0.001\n").unwrap();
        let t = read_factor_table(&p).unwrap();
        assert_eq!(t[1], ("SMB".to_string(), vec![(1, 0.002), (2, 0.001)]));
        std::fs::write(&p, "period,MKT\n1,abc\n").unwrap();
        assert!(matches!(read_factor_table(&p), Err(Error::MalformedRow { line: 2, .. })));
    }
}
