//! Batch front end: `gen`, `train`, `forecast`, `backtest` and `report`.
//!
//! Exit status: 0 on success, 1 for invalid input (arguments, configuration,
//! missing or malformed files), 2 when a run fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use factorlab::backtest::{
    export_factor_series, forecast_path, read_result, read_series, run_backtest, train_windows, write_result, KappaMode, ModelSource,
};
use factorlab::cae::{load_windows, save_windows, CaeEnsemble, CaeModel};
use factorlab::config::RunConfig;
use factorlab::forecasters::{write_exchange, write_factor_series, ForecasterKind};
use factorlab::io::write_text;
use factorlab::panel::PanelData;
use factorlab::report::{build_report, frontier_csv, read_factor_table, report_csv, report_text, wealth_csv, Manifest, ReportInputs};
use factorlab::synthdata::generate;
use factorlab::Error;

const THREADS_ENV: &str = "FACTORLAB_THREADS";
const ORACLE_FILE: &str = "oracle.cae";

#[derive(Parser)]
#[command(name = "factorlab", version, about = "Latent factor portfolios with uncertainty-aware factor selection")]
struct Cli {
    /// Worker threads (default: FACTORLAB_THREADS, then the config, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (`[section]` + `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Panel CSV `period,asset_id,ret,c_1,...`.
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Directory of trained window models (from `train`).
    #[arg(long)]
    models: Option<PathBuf>,
    /// Ground-truth directory from `gen`; uses the exact generating model.
    #[arg(long, conflicts_with = "models")]
    truth: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel and its ground truth.
    Gen(Common),
    /// Train the expert ensemble of every retraining window.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        panel: Option<PathBuf>,
    },
    /// Export factor series and write quantile forecasts in the exchange format.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "iid")]
        forecaster: ForecasterKind,
    },
    /// Run the expanding-window backtest.
    Backtest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Forecaster(s) to run; repeat for several (default: config).
        #[arg(long)]
        forecaster: Vec<ForecasterKind>,
        /// `fixed:N` or `adaptive` (default: config).
        #[arg(long)]
        kappa: Option<KappaMode>,
        /// Exchange CSV for the external forecaster.
        #[arg(long)]
        external: Option<PathBuf>,
    },
    /// Performance tables and plot data from a backtest output directory.
    Report {
        #[command(flatten)]
        common: Common,
        /// Backtest output directory.
        #[arg(long)]
        ledger: PathBuf,
    },
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

fn load_config(common: &Common) -> factorlab::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.paths.out = Some(o.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> factorlab::Result<PathBuf> {
    cfg.paths.out.clone().ok_or_else(|| invalid("no output directory (use --out or [paths] out)"))
}

fn load_panel(cfg: &mut RunConfig, flag: Option<&PathBuf>) -> factorlab::Result<PanelData> {
    if let Some(p) = flag {
        cfg.paths.panel = Some(p.clone());
    }
    let path = cfg.paths.panel.clone().ok_or_else(|| invalid("no panel file (use --panel or [paths] panel)"))?;
    info!("reading panel {}", path.display());
    PanelData::read_csv(&path)
}

fn model_source(cfg: &mut RunConfig, m: &ModelArgs) -> factorlab::Result<ModelSource> {
    if let Some(t) = &m.truth {
        cfg.paths.truth = Some(t.clone());
        cfg.paths.models = None;
    } else if let Some(d) = &m.models {
        cfg.paths.models = Some(d.clone());
        cfg.paths.truth = None;
    }
    if let Some(t) = &cfg.paths.truth {
        let oracle = CaeModel::load(&t.join(ORACLE_FILE))?;
        return Ok(ModelSource::Fixed(CaeEnsemble::new(vec![oracle])?));
    }
    if let Some(d) = &cfg.paths.models {
        return Ok(ModelSource::Windows(load_windows(d)?));
    }
    Ok(ModelSource::Train(cfg.cae.clone()))
}

fn finish(command: &str, cfg: &RunConfig, out: &Path, files: &[PathBuf]) -> factorlab::Result<()> {
    let mut manifest = Manifest::new(command, cfg);
    manifest.add(out, files)?;
    let p = manifest.write(out)?;
    info!("wrote {} artifacts and {}", files.len(), p.display());
    Ok(())
}

fn cmd_gen(common: &Common) -> factorlab::Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let out = out_dir(&cfg)?;
    let (panel, truth) = generate(&cfg.synth.spec(cfg.seed))?;
    let panel_path = out.join("panel.csv");
    panel.write_csv(&panel_path)?;
    let truth_dir = out.join("truth");
    let (fp, bp) = (truth_dir.join("factors.csv"), truth_dir.join("betas.csv"));
    truth.write(&fp, &bp)?;
    let mut files = vec![panel_path, fp, bp];
    if let Ok(oracle) = truth.oracle_model() {
        let p = truth_dir.join(ORACLE_FILE);
        oracle.save(&p)?;
        files.push(p);
    }
    finish("gen", &cfg, &out, &files)
}

fn cmd_train(common: &Common, panel: Option<&PathBuf>) -> factorlab::Result<()> {
    let mut cfg = load_config(common)?;
    let panel = load_panel(&mut cfg, panel)?;
    cfg.validate()?;
    let out = out_dir(&cfg)?;
    let bt = cfg.backtest_for(&panel.periods())?;
    let windows = train_windows(&panel, &cfg.cae, &bt)?;
    let files = save_windows(&out.join("models"), &windows)?;
    finish("train", &cfg, &out, &files)
}

fn cmd_forecast(common: &Common, m: &ModelArgs, kind: ForecasterKind) -> factorlab::Result<()> {
    let mut cfg = load_config(common)?;
    let panel = load_panel(&mut cfg, m.panel.as_ref())?;
    let models = model_source(&mut cfg, m)?;
    cfg.validate()?;
    let out = out_dir(&cfg)?;
    let bt = cfg.backtest_for(&panel.periods())?;
    let (periods, series) = export_factor_series(&panel, &models, &bt)?;
    let series_path = out.join("factor_series.csv");
    write_factor_series(&series_path, &periods, &series)?;
    let fcs = forecast_path(&panel, &models, &bt, kind)?;
    let fc_path = out.join(format!("forecasts_{kind}.csv"));
    write_exchange(&fc_path, &fcs)?;
    finish("forecast", &cfg, &out, &[series_path, fc_path])
}

fn cmd_backtest(
    common: &Common,
    m: &ModelArgs,
    forecasters: &[ForecasterKind],
    kappa: Option<KappaMode>,
    external: Option<&PathBuf>,
) -> factorlab::Result<()> {
    let mut cfg = load_config(common)?;
    if !forecasters.is_empty() {
        cfg.backtest.forecasters = forecasters.to_vec();
    }
    if let Some(k) = kappa {
        cfg.backtest.kappa_mode = k;
    }
    if let Some(e) = external {
        cfg.backtest.external_forecasts = Some(e.clone());
    }
    let panel = load_panel(&mut cfg, m.panel.as_ref())?;
    let models = model_source(&mut cfg, m)?;
    cfg.validate()?;
    let out = out_dir(&cfg)?;
    let bt = cfg.backtest_for(&panel.periods())?;
    let benchmark = cfg.paths.benchmark.as_deref().map(read_series).transpose()?;
    let result = run_backtest(&panel, &models, &bt, benchmark.as_deref())?;
    let files = write_result(&out, &result)?;
    finish("backtest", &cfg, &out, &files)
}

fn cmd_report(common: &Common, ledger: &Path) -> factorlab::Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(&cfg)?;
    let strategies = read_result(ledger)?;
    let bench_path = cfg.paths.benchmark.clone().unwrap_or_else(|| ledger.join("benchmark.csv"));
    let inputs = ReportInputs {
        benchmark: if bench_path.exists() { Some(read_series(&bench_path)?) } else { None },
        risk_free: cfg.paths.risk_free.as_deref().map(read_series).transpose()?,
        factors: cfg.paths.factors.as_deref().map(read_factor_table).transpose()?.unwrap_or_default(),
    };
    let report = build_report(&strategies, &inputs)?;
    let text = report_text(&report);
    let files = [
        (out.join("report.csv"), report_csv(&report)),
        (out.join("report.txt"), text.clone()),
        (out.join("wealth.csv"), wealth_csv(&strategies, inputs.benchmark.as_deref())?),
        (out.join("frontier.csv"), frontier_csv(&strategies, &report)),
    ];
    for (p, body) in &files {
        write_text(p, body)?;
    }
    print!("{text}");
    finish("report", &cfg, &out, &files.map(|f| f.0))
}

fn thread_count(flag: Option<usize>, config: Option<&Path>) -> Result<Option<usize>, Error> {
    if flag.is_some() {
        return Ok(flag);
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return v.trim().parse().map(Some).map_err(|_| invalid(format!("{THREADS_ENV}='{v}' is not a thread count")));
    }
    match config {
        Some(p) => Ok(RunConfig::load(p)?.threads),
        None => Ok(None),
    }
}

fn run(cli: Cli) -> factorlab::Result<()> {
    let config = match &cli.command {
        Command::Gen(c)
        | Command::Train { common: c, .. }
        | Command::Forecast { common: c, .. }
        | Command::Backtest { common: c, .. }
        | Command::Report { common: c, .. } => c.config.clone(),
    };
    if let Some(n) = thread_count(cli.threads, config.as_deref())? {
        if n == 0 {
            return Err(invalid("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| invalid(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Gen(c) => cmd_gen(c),
        Command::Train { common, panel } => cmd_train(common, panel.as_ref()),
        Command::Forecast { common, model, forecaster } => cmd_forecast(common, model, *forecaster),
        Command::Backtest { common, model, forecaster, kappa, external } => {
            cmd_backtest(common, model, forecaster, *kappa, external.as_ref())
        }
        Command::Report { common, ledger } => cmd_report(common, ledger),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
