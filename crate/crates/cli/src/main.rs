//! `tracker` command line: synthetic data generation, training, evaluation,
//! walk-forward backtests, single-instance rebalance checks, and report
//! rendering.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure. Set `TRACKER_LOG` (e.g. `debug`) to control verbosity.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tracker_core::backtest::{
    evaluate_model, plan_windows, report_csv, report_json, RunConfig, RunManifest, Window,
    WindowResult,
};
use tracker_core::error::{Result, TrackerError};
use tracker_core::market::{load_panel, save_panel, synth_panel, MarketPanel, SynthSpec};
use tracker_core::metrics::{ErrorKind, Penalty, Trajectory};
use tracker_core::rebalance::{run_instance, RebalanceInstance};
use tracker_core::rl::checkpoint::{load_model, save_model};
use tracker_core::rl::train::{train, EpochLog, TrainSetup, TrainedModel};

#[derive(Parser)]
#[command(name = "tracker", version, about = "Index-tracking engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic market panel with a known index construction.
    Synth(SynthArgs),
    /// Train a policy on the training range of a panel.
    Train(TrainArgs),
    /// Evaluate a trained model out of sample.
    Evaluate(EvaluateArgs),
    /// Rolling-window backtest: plan, train, and evaluate every window.
    Backtest(BacktestArgs),
    /// Solve one rebalance instance given as JSON.
    Rebalance(RebalanceArgs),
    /// Re-render a report from saved window results.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    stocks: usize,
    #[arg(long, default_value_t = 760)]
    days: usize,
    /// Comma-separated index weights (defaults to equal weight).
    #[arg(long)]
    index_weights: Option<String>,
    #[arg(long, default_value_t = 0.0002)]
    drift: f64,
    #[arg(long, default_value_t = 0.01)]
    vol: f64,
    #[arg(long, default_value_t = 100.0)]
    p0: f64,
    #[arg(long, default_value_t = 1000.0)]
    index0: f64,
    #[arg(long, default_value_t = 0.0001)]
    tbill: f64,
    /// Omit the VIX column (state width shrinks accordingly).
    #[arg(long)]
    no_vix: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Config-file knobs exposed as flags; every flag overrides the loaded
/// config.
#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    v0: Option<f64>,
    #[arg(long)]
    train_days: Option<usize>,
    #[arg(long)]
    test_days: Option<usize>,
    #[arg(long)]
    weight_threshold: Option<f64>,
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    has_vix: Option<bool>,
    /// Trading days per period (M).
    #[arg(long)]
    m: Option<usize>,
    /// Look-back periods (n_s).
    #[arg(long)]
    n_s: Option<usize>,
    /// Episode length in periods (n).
    #[arg(long)]
    episode_len: Option<usize>,
    /// Rebalancing stride in days (n_b).
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    e1: Option<f64>,
    #[arg(long)]
    e2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    episodes_per_epoch: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    t0_split_days: Option<usize>,
    /// Tracking objective: return_based or value_based.
    #[arg(long)]
    error_kind: Option<String>,
    #[arg(long)]
    q: Option<f64>,
    /// Deviation penalty: absolute or negative_part_only.
    #[arg(long)]
    penalty: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    /// Enable the cash-flow control (value tracking).
    #[arg(long)]
    cash: Option<bool>,
    #[arg(long)]
    b_f: Option<f64>,
    #[arg(long)]
    xi_cap: Option<f64>,
    /// Comma-separated hidden widths of the policy networks.
    #[arg(long)]
    policy_hidden: Option<String>,
    #[arg(long)]
    value_hidden: Option<String>,
    #[arg(long)]
    batch_norm: Option<bool>,
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| TrackerError::Config(format!("bad {what} entry '{s}'")))
        })
        .collect()
}

impl Overrides {
    fn apply(&self, config: &mut RunConfig) -> Result<()> {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = &$value {
                    $field = v.clone();
                }
            };
        }
        set!(config.panel, self.panel);
        set!(config.seed, self.seed);
        set!(config.v0, self.v0);
        set!(config.train_days, self.train_days);
        set!(config.test_days, self.test_days);
        set!(config.weight_threshold, self.weight_threshold);
        set!(config.normalize, self.normalize);
        set!(config.has_vix, self.has_vix);
        set!(config.grid.m, self.m);
        set!(config.grid.n_s, self.n_s);
        set!(config.grid.n, self.episode_len);
        set!(config.grid.n_b, self.stride);
        set!(config.hyper.gamma, self.gamma);
        set!(config.hyper.lambda, self.lambda);
        set!(config.hyper.epsilon, self.epsilon);
        set!(config.hyper.e1, self.e1);
        set!(config.hyper.e2, self.e2);
        set!(config.hyper.lr, self.lr);
        set!(config.hyper.epochs, self.epochs);
        set!(config.hyper.episodes_per_epoch, self.episodes_per_epoch);
        set!(config.hyper.minibatch, self.minibatch);
        set!(config.hyper.workers, self.workers);
        set!(config.hyper.zeta, self.zeta);
        if let Some(v) = self.t0_split_days {
            config.hyper.t0_split_days = Some(v);
        }
        if let Some(kind) = &self.error_kind {
            config.error.kind = match kind.as_str() {
                "return_based" => ErrorKind::ReturnBased,
                "value_based" => ErrorKind::ValueBased,
                other => {
                    return Err(TrackerError::Config(format!(
                        "unknown error kind '{other}' (expected return_based or value_based)"
                    )))
                }
            };
        }
        set!(config.error.q, self.q);
        if let Some(p) = &self.penalty {
            config.error.penalty = match p.as_str() {
                "absolute" => Penalty::Absolute,
                "negative_part_only" => Penalty::NegativePartOnly,
                other => {
                    return Err(TrackerError::Config(format!(
                        "unknown penalty '{other}' (expected absolute or negative_part_only)"
                    )))
                }
            };
        }
        set!(config.error.beta, self.beta);
        set!(config.cash.enabled, self.cash);
        set!(config.cash.b_f, self.b_f);
        set!(config.cash.xi_cap, self.xi_cap);
        if let Some(h) = &self.policy_hidden {
            config.nets.policy_hidden = parse_usize_list(h, "policy hidden width")?;
        }
        if let Some(h) = &self.value_hidden {
            config.nets.value_hidden = parse_usize_list(h, "value hidden width")?;
        }
        set!(config.nets.batch_norm, self.batch_norm);
        Ok(())
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Trained model checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BacktestArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out_dir: PathBuf,
    /// Seed each window's networks from the previous window's model when
    /// the universe matches (default: train from scratch).
    #[arg(long)]
    warm_start: bool,
}

#[derive(Args)]
struct RebalanceArgs {
    /// JSON instance file ('-' reads stdin).
    #[arg(long)]
    instance: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON with window results (a backtest report.json or a bare array).
    #[arg(long)]
    windows: PathBuf,
    #[arg(long, default_value_t = 2e10)]
    v0: f64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>, overrides: &Overrides) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::from_toml_file(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut config)?;
    Ok(config)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_manifest(dir: &Path, config: &RunConfig) -> Result<()> {
    let manifest = RunManifest::for_config(config);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

fn write_training_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut out = String::from(
        "epoch,total_loss,clip_loss,value_loss,entropy_loss,mean_cum_reward,transitions,minibatches,skipped_samples,aborted_episodes\n",
    );
    for l in logs {
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{},{}\n",
            l.epoch,
            l.total_loss,
            l.clip_loss,
            l.value_loss,
            l.entropy_loss,
            l.mean_cum_reward,
            l.transitions,
            l.minibatches,
            l.skipped_samples,
            l.aborted_episodes
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<()> {
    let mut out = String::from("date,value_before,index_level,h,cost,traded_shares,rate\n");
    for d in &trajectory.days {
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            d.date, d.value_before, d.index_level, d.h, d.cost, d.traded_shares, d.rate
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Training panel for a window: look-back buffer plus training days, cut to
/// the window's universe.
fn training_slice(panel: &MarketPanel, window: &Window) -> Result<MarketPanel> {
    let slice = panel.slice(window.train_start, window.test_start, &window.universe);
    slice.validate_complete()?;
    Ok(slice)
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let weights = match &args.index_weights {
        Some(text) => {
            let ws: Vec<f64> = text
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| TrackerError::Config(format!("bad weight '{s}'")))
                })
                .collect::<Result<_>>()?;
            if ws.len() != args.stocks {
                return Err(TrackerError::Config(format!(
                    "{} weights for {} stocks",
                    ws.len(),
                    args.stocks
                )));
            }
            ws
        }
        None => vec![1.0 / args.stocks as f64; args.stocks],
    };
    let spec = SynthSpec {
        index_weights: weights,
        drift: args.drift,
        vol: args.vol,
        p0: args.p0,
        index0: args.index0,
        tbill: args.tbill,
        with_vix: !args.no_vix,
    };
    let panel = synth_panel(args.seed, args.stocks, args.days, &spec)?;
    save_panel(&panel, &args.out)?;
    log::info!(
        "wrote {}-day panel of {} stocks to {}",
        panel.len(),
        panel.n_stocks(),
        args.out.display()
    );
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let config = load_config(&args.config, &args.overrides)?;
    let panel = load_panel(&config.panel, &config.schema())?;
    let lookback = config.grid.lookback_days();
    let train_end = lookback + config.train_days;
    if train_end >= panel.len() {
        return Err(TrackerError::Config(format!(
            "panel has {} days; training needs look-back {lookback} + {} days",
            panel.len(),
            config.train_days
        )));
    }
    let universe = panel.complete_stocks(0, train_end);
    if universe.is_empty() {
        return Err(TrackerError::Data("no stock is complete over the training range".into()));
    }
    let train_panel = panel.slice(0, train_end, &universe);
    train_panel.validate_complete()?;

    let n = train_panel.n_stocks();
    let setup = TrainSetup {
        panel: &train_panel,
        grid: config.grid,
        error_spec: config.error,
        hyper: config.hyper,
        nets: config.nets.clone(),
        cost: config.cost.build(n)?,
        cash: config.cash.to_config(),
        solver: config.solver_options(),
        v0: config.v0,
        seed: config.seed,
        normalize: config.normalize,
        init: None,
    };
    let (model, logs) = train(&setup)?;

    ensure_dir(&args.out_dir)?;
    save_model(&model, &args.out_dir.join("model.json"))?;
    write_training_log(&args.out_dir.join("training_log.csv"), &logs)?;
    write_manifest(&args.out_dir, &config)?;
    log::info!(
        "trained {} epochs on {} stocks; artifacts in {}",
        logs.len(),
        n,
        args.out_dir.display()
    );
    Ok(())
}

fn map_universe(panel: &MarketPanel, tickers: &[String]) -> Result<Vec<usize>> {
    tickers
        .iter()
        .map(|t| {
            panel
                .tickers
                .iter()
                .position(|p| p == t)
                .ok_or_else(|| TrackerError::Data(format!("panel lacks ticker {t}")))
        })
        .collect()
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let config = load_config(&args.config, &args.overrides)?;
    let model = load_model(&args.model)?;
    let panel = load_panel(&config.panel, &config.schema())?;
    let universe = map_universe(&panel, &model.tickers)?;
    let full = panel.slice(0, panel.len() - 1, &universe);

    let lookback = model.grid.lookback_days();
    let test_start = lookback + config.train_days;
    let test_end = test_start + config.test_days;
    if test_end >= full.len() {
        return Err(TrackerError::Config(format!(
            "panel has {} days; evaluation needs day {test_end}",
            full.len()
        )));
    }

    let settings = eval_settings(&config, &model)?;
    let (metrics, trajectory) = evaluate_model(
        &model,
        &full,
        &settings,
        test_start,
        test_end,
        config.weight_threshold,
    )?;

    ensure_dir(&args.out_dir)?;
    let label = format!(
        "{}..{}",
        full.dates[test_start],
        full.dates[test_end]
    );
    let results = vec![WindowResult {
        label,
        metrics,
    }];
    std::fs::write(
        args.out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    write_trajectory(&args.out_dir.join("trajectory.csv"), &trajectory)?;
    std::fs::write(
        args.out_dir.join("report.csv"),
        report_csv(&results, config.v0),
    )?;
    write_manifest(&args.out_dir, &config)?;
    log::info!("evaluation artifacts in {}", args.out_dir.display());
    Ok(())
}

fn eval_settings(
    config: &RunConfig,
    model: &TrainedModel,
) -> Result<tracker_core::backtest::EvalSettings> {
    Ok(tracker_core::backtest::EvalSettings {
        cost: config.cost.build(model.tickers.len())?,
        solver: config.solver_options(),
        v0: config.v0,
        q: config.error.q,
        xi_cap: config.cash.xi_cap,
        m: model.grid.m,
        n_b: model.grid.n_b,
    })
}

fn run_backtest(args: &BacktestArgs) -> Result<()> {
    let config = load_config(&args.config, &args.overrides)?;
    let panel = load_panel(&config.panel, &config.schema())?;
    let plan = plan_windows(&panel, &config.grid, config.train_days, config.test_days)?;
    log::info!("planned {} windows", plan.windows.len());

    ensure_dir(&args.out_dir)?;
    std::fs::write(
        args.out_dir.join("windows.json"),
        serde_json::to_string_pretty(&plan)?,
    )?;

    let mut results: Vec<WindowResult> = Vec::new();
    let mut previous: Option<TrainedModel> = None;
    for (idx, window) in plan.windows.iter().enumerate() {
        let window_dir = args.out_dir.join(format!("window_{idx:02}"));
        ensure_dir(&window_dir)?;

        let train_panel = training_slice(&panel, window)?;
        let n = train_panel.n_stocks();
        let init = if args.warm_start {
            previous
                .as_ref()
                .filter(|m| m.tickers == train_panel.tickers)
                .map(|m| (m.policy.clone(), m.value_net.clone()))
        } else {
            None
        };
        let setup = TrainSetup {
            panel: &train_panel,
            grid: config.grid,
            error_spec: config.error,
            hyper: config.hyper,
            nets: config.nets.clone(),
            cost: config.cost.build(n)?,
            cash: config.cash.to_config(),
            solver: config.solver_options(),
            v0: config.v0,
            seed: config.seed.wrapping_add(idx as u64),
            normalize: config.normalize,
            init,
        };
        let (model, logs) = train(&setup)?;
        save_model(&model, &window_dir.join("model.json"))?;
        write_training_log(&window_dir.join("training_log.csv"), &logs)?;

        // Evaluation panel: same universe, extended through the test range.
        let eval_panel = panel.slice(window.train_start, window.test_end, &window.universe);
        eval_panel.validate_complete().map_err(|e| {
            TrackerError::Data(format!(
                "window {idx}: universe stock missing test-range data: {e}"
            ))
        })?;
        let test_start = window.test_start - window.train_start;
        let test_end = window.test_end - window.train_start;
        let settings = eval_settings(&config, &model)?;
        let (metrics, trajectory) = evaluate_model(
            &model,
            &eval_panel,
            &settings,
            test_start,
            test_end,
            config.weight_threshold,
        )?;
        write_trajectory(&window_dir.join("trajectory.csv"), &trajectory)?;

        results.push(WindowResult {
            label: format!("{}..{}", window.test_start_date, window.test_end_date),
            metrics,
        });
        previous = Some(model);
        log::info!(
            "window {idx}: test {}..{} done (r_te {:.3e}, v_te {:.3e})",
            window.test_start_date,
            window.test_end_date,
            metrics.r_te,
            metrics.v_te
        );
    }

    std::fs::write(
        args.out_dir.join("report.csv"),
        report_csv(&results, config.v0),
    )?;
    std::fs::write(
        args.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report_json(&results, config.v0))?,
    )?;
    write_manifest(&args.out_dir, &config)?;
    log::info!("backtest artifacts in {}", args.out_dir.display());
    Ok(())
}

fn run_rebalance(args: &RebalanceArgs) -> Result<()> {
    let text = if args.instance == Path::new("-") {
        let mut buf = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut buf)?;
        buf
    } else {
        std::fs::read_to_string(&args.instance)?
    };
    let instance: RebalanceInstance = serde_json::from_str(&text)?;
    let outcome = run_instance(&instance)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string_pretty(&outcome)?)?;
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.windows)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let windows_value = if value.is_array() {
        value
    } else {
        value
            .get("windows")
            .cloned()
            .ok_or_else(|| TrackerError::Data("no 'windows' array in input".into()))?
    };
    let results: Vec<WindowResult> = serde_json::from_value(windows_value)?;
    if results.is_empty() {
        return Err(TrackerError::Data("no window results to report".into()));
    }
    let csv = report_csv(&results, args.v0);
    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Backtest(args) => run_backtest(args),
        Command::Rebalance(args) => run_rebalance(args),
        Command::Report(args) => run_report(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRACKER_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
