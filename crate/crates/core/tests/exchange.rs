use std::fmt::Write as _;
use std::fs;

use factorlab::backtest::{export_factor_series, run_backtest, BacktestConfig, KappaMode, ModelSource};
use factorlab::cae::CaeEnsemble;
use factorlab::forecasters::{load_exchange, read_exchange, read_factor_series, write_factor_series, ForecasterKind, IidConfig};
use factorlab::panel::PanelData;
use factorlab::synthdata::{generate, SynthSpec};

const LEVELS: [&str; 9] = ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9"];

fn setup() -> (PanelData, ModelSource) {
    let (panel, truth) = generate(&SynthSpec::planted(50, 5, 3, 190, 0.9, 17)).unwrap();
    (panel, ModelSource::Fixed(CaeEnsemble::new(vec![truth.oracle_model().unwrap()]).unwrap()))
}

fn config(panel: &PanelData) -> BacktestConfig {
    BacktestConfig {
        oos_start: panel.section(160).period,
        oos_end: Some(panel.section(185).period),
        iid: IidConfig { resamples: 100 },
        top_n: 30,
        seed: 4,
        ..BacktestConfig::default()
    }
}

/// Rows as a quantile-regression bridge writes them: nine levels plus a central row.
fn bridge_rows(out: &mut String, period: i64, factor: usize, centre: f64, spread: f64) {
    for (i, level) in LEVELS.iter().enumerate() {
        writeln!(out, "{period},{factor},{level},{}", centre + spread * (i as f64 - 4.0)).unwrap();
    }
    writeln!(out, "{period},{factor},central,{centre}").unwrap();
}

#[test]
fn bridge_output_for_ten_factors_loads_without_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bridge.csv");
    let mut text = String::from("target_period,factor_id,level,value\n");
    // factors written in reverse to check order independence
    for k in (0..10).rev() {
        bridge_rows(&mut text, 202401, k, 0.001 * k as f64, 0.002 * (k + 1) as f64);
    }
    assert_eq!(text.lines().count(), 1 + 100);
    fs::write(&path, &text).unwrap();
    let (fcs, warnings) = load_exchange(&path, 10, 202401).unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");
    assert_eq!(fcs.len(), 10);
    for (k, f) in fcs.iter().enumerate() {
        assert_eq!(f.factor_id, k);
        assert_eq!(f.quantiles.len(), 9);
        assert_eq!(f.central, f.quantile(0.5).unwrap());
        assert!(f.is_monotone());
    }
    // a period absent from the file is an error, not an empty forecast
    assert!(load_exchange(&path, 10, 202402).is_err());
    assert!(load_exchange(&path, 11, 202401).is_err());
}

#[test]
fn bridge_rows_in_any_order_give_identical_forecasts() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for k in 0..4 {
        bridge_rows(&mut text, 202403, k, 0.01, 0.003);
    }
    let mut rows: Vec<&str> = text.lines().collect();
    let sorted = format!("target_period,factor_id,level,value\n{}\n", rows.join("\n"));
    rows.reverse();
    rows.rotate_left(7);
    let shuffled = format!("target_period,factor_id,level,value\n{}\n", rows.join("\n"));
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    fs::write(&a, sorted).unwrap();
    fs::write(&b, shuffled).unwrap();
    assert_eq!(read_exchange(&a, 4).unwrap(), read_exchange(&b, 4).unwrap());
}

#[test]
fn factor_export_matches_bridge_input_schema() {
    let (panel, models) = setup();
    let cfg = config(&panel);
    let (periods, series) = export_factor_series(&panel, &models, &cfg).unwrap();
    assert_eq!(series.len(), 3);
    assert!(series.iter().all(|s| s.len() == periods.len()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("factor_series.csv");
    write_factor_series(&path, &periods, &series).unwrap();

    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("period,factor_id,value"));
    let body: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(body.len(), periods.len() * 3);
    for row in &body {
        assert_eq!(row.len(), 3);
        let p: i64 = row[0].parse().unwrap();
        let k: usize = row[1].parse().unwrap();
        let v: f64 = row[2].parse().unwrap();
        let t = periods.iter().position(|&x| x == p).unwrap();
        assert!((v - series[k][t]).abs() <= 1e-11 * series[k][t].abs(), "{v} vs {}", series[k][t]);
    }

    let (p2, s2) = read_factor_series(&path).unwrap();
    assert_eq!(p2, periods);
    let again = dir.path().join("again.csv");
    write_factor_series(&again, &p2, &s2).unwrap();
    assert_eq!(fs::read_to_string(&again).unwrap(), text);
}

#[test]
fn mock_bridge_forecasts_drive_an_external_backtest() {
    let (panel, models) = setup();
    let base = config(&panel);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mock.csv");
    // factor 1 always has the narrowest band, so it must rank first; the first
    // target period is left out and that decision holds cash
    let mut text = String::from("target_period,factor_id,level,value\n");
    for row in 161..=185 {
        for k in 0..3 {
            let spread = if k == 1 { 0.0005 } else { 0.004 * (k + 1) as f64 };
            bridge_rows(&mut text, panel.section(row).period, k, 0.002, spread);
        }
    }
    fs::write(&path, text).unwrap();
    let cfg = BacktestConfig {
        forecasters: vec![ForecasterKind::External],
        external_forecasts: Some(path),
        kappa_mode: KappaMode::Fixed(1),
        ..base
    };
    let res = run_backtest(&panel, &models, &cfg, None).unwrap();
    assert_eq!(res.rankings.len(), 25);
    assert!(res.rankings.iter().all(|r| r.ranked[0] == 1), "{:?}", res.rankings);
    assert!(res.rankings.iter().all(|r| r.period != panel.section(159).period));
    let k1 = res.strategies.iter().find(|s| s.name == "external_k1").unwrap();
    assert_eq!(k1.rows.len(), 26);
    assert_eq!(k1.rows[0].gross, 0.0);
    assert!(k1.rows[1..].iter().any(|r| r.gross != 0.0));
}
