//! Walk-forward backtesting: rolling window plans, deterministic evaluation
//! of trained policies, and report generation in the published table layout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::{Coeff, CostModel};
use crate::error::{Result, TrackerError};
use crate::market::{build_state_at_day, MarketPanel, PanelSchema, TimeGrid};
use crate::metrics::{backtest_metrics, BacktestMetrics, DayRecord, ErrorSpec, Trajectory};
use crate::rebalance::{simulate_period, CashRule, PortfolioState, SolverOptions};
use crate::rl::policy::{action_to_f, action_to_weights};
use crate::rl::ppo::PpoHyper;
use crate::rl::train::{CashConfig, NetConfig, TrainedModel};

/// One rolling train/test window, in absolute day indices of the master
/// panel. The training panel spans `train_start..=test_start` (look-back
/// buffer included); the test range is `test_start..=test_end` with
/// `test_start` doubling as the boundary day.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Window {
    pub train_start: usize,
    pub test_start: usize,
    pub test_end: usize,
    /// Stock indices (into the master panel) with complete data across the
    /// training window.
    pub universe: Vec<usize>,
    pub train_start_date: String,
    pub test_start_date: String,
    pub test_end_date: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowPlan {
    pub windows: Vec<Window>,
}

/// Roll consecutive, non-overlapping test windows of `test_days` across the
/// panel, each trained on up to `train_days` preceding days (clamped to the
/// earliest available data) plus the model's look-back buffer. A window's
/// universe keeps the stocks with complete data over its training window.
pub fn plan_windows(
    panel: &MarketPanel,
    grid: &TimeGrid,
    train_days: usize,
    test_days: usize,
) -> Result<WindowPlan> {
    if train_days == 0 || test_days == 0 {
        return Err(TrackerError::Config(
            "train and test window lengths must be positive".into(),
        ));
    }
    let lookback = grid.lookback_days();
    let first_test_start = lookback + train_days;
    if first_test_start + test_days >= panel.len() {
        return Err(TrackerError::Config(format!(
            "panel of {} days is too short for look-back {lookback} + train {train_days} + test {test_days}",
            panel.len()
        )));
    }
    let mut windows = Vec::new();
    let mut test_start = first_test_start;
    while test_start + test_days < panel.len() {
        let test_end = test_start + test_days;
        let train_start = test_start.saturating_sub(train_days + lookback);
        let universe = panel.complete_stocks(train_start, test_start);
        if universe.is_empty() {
            return Err(TrackerError::Data(format!(
                "no stock has complete data over training days {train_start}..{test_start}"
            )));
        }
        windows.push(Window {
            train_start,
            test_start,
            test_end,
            universe,
            train_start_date: panel.dates[train_start].clone(),
            test_start_date: panel.dates[test_start].clone(),
            test_end_date: panel.dates[test_end].clone(),
        });
        test_start = test_end;
    }
    Ok(WindowPlan { windows })
}

/// Zero out weights at or below the threshold and renormalize to sum one.
pub fn threshold_weights(weights: &[f64], threshold: f64) -> Result<Vec<f64>> {
    let kept: Vec<f64> = weights
        .iter()
        .map(|w| if *w <= threshold { 0.0 } else { *w })
        .collect();
    let sum: f64 = kept.iter().sum();
    if !(sum > 0.0) {
        return Err(TrackerError::Numerical(format!(
            "weight threshold {threshold} wiped out the whole portfolio"
        )));
    }
    Ok(kept.iter().map(|w| w / sum).collect())
}

/// Decision callback for the evaluation loop: given the decision day,
/// produce the target weights (summing to one) and, for value tracking, the
/// cash-flow fraction.
pub type DecideFn<'a> = dyn FnMut(usize) -> Result<(Vec<f64>, Option<f64>)> + 'a;

/// Evaluation knobs shared by model-driven and baseline runs.
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub cost: CostModel,
    pub solver: SolverOptions,
    pub v0: f64,
    pub q: f64,
    /// Withdrawal cap when a cash rule is active.
    pub xi_cap: f64,
    /// Trading days per period (decisions are taken every `m` days).
    pub m: usize,
    /// Rebalancing stride within a period.
    pub n_b: usize,
}

/// Core evaluation loop: apply decisions at each period start of
/// `test_start..test_end`, simulate at the stride, and collect the
/// day-level trajectory. Nothing after the current period's closing mark is
/// ever read.
pub fn evaluate_with(
    panel: &MarketPanel,
    settings: &EvalSettings,
    test_start: usize,
    test_end: usize,
    decide: &mut DecideFn,
) -> Result<(BacktestMetrics, Trajectory)> {
    if test_end <= test_start || test_end >= panel.len() {
        return Err(TrackerError::Config(format!(
            "bad test range {test_start}..{test_end} for panel of {} days",
            panel.len()
        )));
    }
    let n = panel.n_stocks();
    let n0 = settings.v0 / panel.index_level[test_start];
    let mut portfolio = PortfolioState::all_cash(n, settings.v0);
    let mut days: Vec<DayRecord> = Vec::with_capacity(test_end - test_start + 1);

    let mut day = test_start;
    while day < test_end {
        let day_end = (day + settings.m).min(test_end);
        let (weights, f) = decide(day)?;
        if weights.len() != n {
            return Err(TrackerError::Config(format!(
                "decision produced {} weights for {n} stocks",
                weights.len()
            )));
        }
        let rule = f.map(|f| CashRule {
            f,
            xi_cap: settings.xi_cap,
            n0,
        });
        let prices = &panel.prices[day..=day_end];
        let index = &panel.index_level[day..=day_end];
        let (end_state, record) = simulate_period(
            &portfolio,
            prices,
            index,
            &weights,
            rule.as_ref(),
            &settings.cost,
            settings.n_b,
            &settings.solver,
        )
        .map_err(|e| {
            TrackerError::Numerical(format!(
                "evaluation failed in the period starting {}: {e}",
                panel.dates[day]
            ))
        })?;

        for k in 0..(day_end - day) {
            days.push(DayRecord {
                date: panel.dates[day + k].clone(),
                value_before: record.values_before[k],
                index_level: index[k],
                h: record.cash_flows[k],
                cost: record.costs[k],
                traded_shares: record.traded_shares[k],
                rate: panel.tbill[day + k],
            });
        }
        portfolio = end_state;
        day = day_end;
    }
    // Closing mark of the window.
    days.push(DayRecord {
        date: panel.dates[test_end].clone(),
        value_before: portfolio.value(&panel.prices[test_end]),
        index_level: panel.index_level[test_end],
        h: 0.0,
        cost: 0.0,
        traded_shares: 0.0,
        rate: panel.tbill[test_end],
    });

    let trajectory = Trajectory { n0, days };
    let metrics = backtest_metrics(&trajectory, settings.q)?;
    Ok((metrics, trajectory))
}

/// Evaluate a trained model with deterministic actions: clipped mean action,
/// softmax weights thresholded and renormalized, sigmoid cash fraction.
pub fn evaluate_model(
    model: &TrainedModel,
    panel: &MarketPanel,
    settings: &EvalSettings,
    test_start: usize,
    test_end: usize,
    weight_threshold: f64,
) -> Result<(BacktestMetrics, Trajectory)> {
    if panel.tickers != model.tickers {
        return Err(TrackerError::Config(format!(
            "panel universe {:?} does not match the model's {:?}",
            panel.tickers, model.tickers
        )));
    }
    let n = panel.n_stocks();
    let grid = model.grid;
    let normalizer = model.normalizer.clone();
    let mut decide = move |day: usize| -> Result<(Vec<f64>, Option<f64>)> {
        let mut state = build_state_at_day(panel, &grid, day)?;
        normalizer.apply(&mut state);
        let action = model.policy.deterministic_action(state.flat());
        let raw = action_to_weights(&action[..n]);
        let weights = threshold_weights(&raw, weight_threshold)?;
        log::debug!(
            "decision {}: raw weights {raw:?} -> thresholded {weights:?}",
            panel.dates[day]
        );
        let f = model
            .cash
            .map(|c| action_to_f(action[n], model.policy.b, c.b_f));
        Ok((weights, f))
    };
    evaluate_with(panel, settings, test_start, test_end, &mut decide)
}

/// Per-window result row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowResult {
    pub label: String,
    pub metrics: BacktestMetrics,
}

fn mean_and_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

pub const REPORT_HEADER: &str = "window,r_te,v_te,cf,cf_adj,cf_over_v0,tc,tc_over_v0,vol";

/// Render the per-window table plus mean and standard-error rows, mirroring
/// the published column layout. Stderr cells print `NA` for a single window.
pub fn report_csv(results: &[WindowResult], v0: f64) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    let fmt = |v: f64| format!("{v:.6e}");
    let row_of = |m: &BacktestMetrics| -> [f64; 8] {
        [
            m.r_te,
            m.v_te,
            m.cf,
            m.cf_adj,
            m.cf / v0,
            m.tc,
            m.tc / v0,
            m.vol,
        ]
    };
    for r in results {
        let cells = row_of(&r.metrics);
        out.push_str(&r.label);
        for c in cells {
            out.push(',');
            out.push_str(&fmt(c));
        }
        out.push('\n');
    }
    let columns: Vec<Vec<f64>> = (0..8)
        .map(|i| results.iter().map(|r| row_of(&r.metrics)[i]).collect())
        .collect();
    let mut mean_row = String::from("mean");
    let mut stderr_row = String::from("stderr");
    for col in &columns {
        let (mean, stderr) = mean_and_stderr(col);
        mean_row.push(',');
        mean_row.push_str(&fmt(mean));
        stderr_row.push(',');
        match stderr {
            Some(s) => stderr_row.push_str(&fmt(s)),
            None => stderr_row.push_str("NA"),
        }
    }
    out.push_str(&mean_row);
    out.push('\n');
    out.push_str(&stderr_row);
    out.push('\n');
    out
}

/// JSON summary: per-window rows plus mean and standard error per metric.
pub fn report_json(results: &[WindowResult], v0: f64) -> serde_json::Value {
    let names = [
        "r_te",
        "v_te",
        "cf",
        "cf_adj",
        "cf_over_v0",
        "tc",
        "tc_over_v0",
        "vol",
    ];
    let extract = |m: &BacktestMetrics| -> [f64; 8] {
        [
            m.r_te,
            m.v_te,
            m.cf,
            m.cf_adj,
            m.cf / v0,
            m.tc,
            m.tc / v0,
            m.vol,
        ]
    };
    let mut summary = serde_json::Map::new();
    for (i, name) in names.iter().enumerate() {
        let col: Vec<f64> = results.iter().map(|r| extract(&r.metrics)[i]).collect();
        let (mean, stderr) = mean_and_stderr(&col);
        summary.insert(
            name.to_string(),
            serde_json::json!({
                "mean": mean,
                "stderr": stderr,
            }),
        );
    }
    serde_json::json!({
        "windows": results,
        "summary": summary,
    })
}

/// Cost-model choice as it appears in run configs; coefficients broadcast
/// from scalars or given per stock.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum CostConfig {
    BrokerMinMax {
        xi1: Coeff,
        xi2: Coeff,
        xi3: Coeff,
    },
    BrokerMinMaxWithRegFees {
        xi1: Coeff,
        xi2: Coeff,
        xi3: Coeff,
        nu1: f64,
        nu2: f64,
    },
    FixedPlusProportional {
        xi3: Coeff,
        xi4: Coeff,
    },
    Zero,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig::BrokerMinMax {
            xi1: Coeff::Scalar(crate::cost::IB_XI1),
            xi2: Coeff::Scalar(crate::cost::IB_XI2),
            xi3: Coeff::Scalar(crate::cost::IB_XI3),
        }
    }
}

impl CostConfig {
    pub fn build(&self, n: usize) -> Result<CostModel> {
        let model = match self {
            CostConfig::BrokerMinMax { xi1, xi2, xi3 } => CostModel::BrokerMinMax {
                xi1: xi1.expand(n)?,
                xi2: xi2.expand(n)?,
                xi3: xi3.expand(n)?,
            },
            CostConfig::BrokerMinMaxWithRegFees {
                xi1,
                xi2,
                xi3,
                nu1,
                nu2,
            } => CostModel::BrokerMinMaxWithRegFees {
                xi1: xi1.expand(n)?,
                xi2: xi2.expand(n)?,
                xi3: xi3.expand(n)?,
                nu1: *nu1,
                nu2: *nu2,
            },
            CostConfig::FixedPlusProportional { xi3, xi4 } => CostModel::FixedPlusProportional {
                xi3: xi3.expand(n)?,
                xi4: xi4.expand(n)?,
            },
            CostConfig::Zero => CostModel::zero(n),
        };
        model.validate(n)?;
        Ok(model)
    }
}

/// Cash-rule section of a run config.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CashSection {
    pub enabled: bool,
    pub b_f: f64,
    pub xi_cap: f64,
}

impl Default for CashSection {
    fn default() -> Self {
        CashSection {
            enabled: false,
            b_f: 0.5,
            xi_cap: 0.2,
        }
    }
}

impl CashSection {
    pub fn to_config(self) -> Option<CashConfig> {
        self.enabled.then_some(CashConfig {
            b_f: self.b_f,
            xi_cap: self.xi_cap,
        })
    }
}

/// Full run configuration, loadable from TOML with CLI overrides on top.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Panel CSV path.
    pub panel: PathBuf,
    pub has_vix: bool,
    pub grid: TimeGrid,
    pub error: ErrorSpec,
    pub cost: CostConfig,
    pub cash: CashSection,
    pub hyper: PpoHyper,
    pub nets: NetConfig,
    pub seed: u64,
    pub v0: f64,
    pub normalize: bool,
    pub weight_threshold: f64,
    pub train_days: usize,
    pub test_days: usize,
    pub solver_tol: f64,
    pub solver_max_iter: u32,
    pub solver_override_conditions: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            panel: PathBuf::from("panel.csv"),
            has_vix: true,
            grid: TimeGrid {
                m: 63,
                n_s: 4,
                n: 4,
                n_b: 1,
            },
            error: ErrorSpec::return_based(),
            cost: CostConfig::default(),
            cash: CashSection::default(),
            hyper: PpoHyper::default(),
            nets: NetConfig::desk(),
            seed: 0,
            v0: 2e10,
            normalize: true,
            weight_threshold: 1e-9,
            train_days: 504,
            test_days: 252,
            solver_tol: 1e-15,
            solver_max_iter: 1000,
            solver_override_conditions: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| TrackerError::Config(format!("cannot parse {}: {e}", path.display())))
    }

    pub fn schema(&self) -> PanelSchema {
        PanelSchema {
            has_vix: self.has_vix,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver_tol,
            max_iter: self.solver_max_iter,
            override_conditions: self.solver_override_conditions,
            xi_bound: self.cash.xi_cap,
        }
    }

    /// Stable digest of the full configuration for run manifests.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).unwrap_or_default();
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Run manifest written next to every artifact set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub seed: u64,
    pub crate_version: String,
    pub checkpoint_version: u32,
}

impl RunManifest {
    pub fn for_config(config: &RunConfig) -> RunManifest {
        RunManifest {
            config_digest: config.digest(),
            seed: config.seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_version: crate::rl::checkpoint::CHECKPOINT_VERSION,
        }
    }
}
