//! Banach fixed-point solver for the rebalancing equation and the day-level
//! portfolio simulation built on top of it.
//!
//! At a rebalancing instant the post-rebalance value `V` must satisfy
//! `V = V_before + h - cost(V)`, where the cost itself depends on `V`. Under
//! the contraction conditions the map on the right-hand side has a unique
//! fixed point which the iteration below reaches in a handful of steps.

use serde::{Deserialize, Serialize};

use crate::cost::{check_conditions, contraction_coeff, cost_of, CostModel, RebalanceContext};
use crate::error::{Result, TrackerError};

/// Holdings of the tracking portfolio at an instant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortfolioState {
    pub shares: Vec<f64>,
    pub cash: f64,
}

impl PortfolioState {
    /// Fresh fund: no stock positions, everything in cash.
    pub fn all_cash(n: usize, initial_value: f64) -> Self {
        PortfolioState {
            shares: vec![0.0; n],
            cash: initial_value,
        }
    }

    pub fn stock_values(&self, prices: &[f64]) -> Vec<f64> {
        self.shares
            .iter()
            .zip(prices)
            .map(|(x, p)| x * p)
            .collect()
    }

    /// Total mark-to-market value at the given prices.
    pub fn value(&self, prices: &[f64]) -> f64 {
        self.shares
            .iter()
            .zip(prices)
            .map(|(x, p)| x * p)
            .sum::<f64>()
            + self.cash
    }

    /// Per-stock value fractions (cash excluded from the numerators).
    pub fn weights(&self, prices: &[f64]) -> Vec<f64> {
        let total = self.value(prices);
        if total == 0.0 {
            return vec![0.0; self.shares.len()];
        }
        self.shares
            .iter()
            .zip(prices)
            .map(|(x, p)| x * p / total)
            .collect()
    }
}

/// Result of one exact rebalance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RebalanceOutcome {
    pub v_after: f64,
    pub shares_after: Vec<f64>,
    /// Exact transaction cost, `v_before + h - v_after` by the rebalance
    /// identity.
    pub cost: f64,
    pub h: f64,
    /// Number of applications of the fixed-point map.
    pub iterations: u32,
    /// Fixed-point defect `|cost_of(v_after) - cost|`.
    pub residual: f64,
}

/// Cash injection/withdrawal rule for the value-tracking problem.
///
/// At a rebalance the fund injects `max((I * n0 - V_before) * f, -xi_cap *
/// V_before)`: a fraction `f` of the shortfall versus the index, with
/// withdrawals capped at `xi_cap` of current value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CashRule {
    /// Fraction of the value gap injected, in `[0, b_f]`.
    pub f: f64,
    /// Withdrawal cap as a fraction of pre-rebalance value, in `(0, 1)`.
    pub xi_cap: f64,
    /// Fund share count `V_{0-} / I_0`.
    pub n0: f64,
}

/// Cash flow applied right before rebalancing when the index sits at
/// `index_level` and the portfolio is worth `v_before`.
pub fn cash_flow(rule: &CashRule, index_level: f64, v_before: f64) -> f64 {
    ((index_level * rule.n0 - v_before) * rule.f).max(-rule.xi_cap * v_before)
}

/// Propagate after-rebalance weights through one day of price moves to get
/// the weights right before the next rebalance.
pub fn weights_before(w_prev: &[f64], p_prev: &[f64], p_now: &[f64]) -> Result<Vec<f64>> {
    if w_prev.len() != p_prev.len() || w_prev.len() != p_now.len() {
        return Err(TrackerError::Config(format!(
            "weight propagation dimension mismatch: {} weights, {} / {} prices",
            w_prev.len(),
            p_prev.len(),
            p_now.len()
        )));
    }
    let grown: Vec<f64> = w_prev
        .iter()
        .zip(p_prev.iter().zip(p_now))
        .map(|(w, (pp, pn))| w * pn / pp)
        .collect();
    let denom: f64 = grown.iter().sum();
    if !(denom > 0.0) {
        return Err(TrackerError::Numerical(format!(
            "weight propagation denominator {denom} is not positive (short positions wiped out value)"
        )));
    }
    Ok(grown.iter().map(|g| g / denom).collect())
}

/// Solver controls. `tol` and `max_iter` follow the fixed-point iteration as
/// published; `override_conditions` lets callers proceed when the uniqueness
/// conditions fail, at their own risk.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: u32,
    pub override_conditions: bool,
    /// Withdrawal cap used in the condition check.
    pub xi_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-15,
            max_iter: 1000,
            override_conditions: false,
            xi_bound: 0.2,
        }
    }
}

/// Solve `V = V_before + h - cost(V)` by fixed-point iteration starting from
/// `V_old = 0`, and size the post-rebalance holdings `x_i = w_i V / p_i`.
pub fn solve_fixed_point(
    model: &CostModel,
    ctx: &RebalanceContext,
    opts: &SolverOptions,
) -> Result<RebalanceOutcome> {
    ctx.validate()?;
    model.validate(ctx.n_stocks())?;

    let budget = ctx.v_before + ctx.h;
    if budget <= 0.0 {
        return Err(TrackerError::Numerical(format!(
            "cannot rebalance: v_before + h = {budget} <= 0"
        )));
    }

    if !opts.override_conditions {
        let w_before: Vec<f64> = if ctx.v_before > 0.0 {
            ctx.v_before_i.iter().map(|v| v / ctx.v_before).collect()
        } else {
            vec![0.0; ctx.n_stocks()]
        };
        let report = check_conditions(model, ctx, &w_before, opts.xi_bound);
        if !report.all_pass() {
            let failed: Vec<String> = report
                .failures()
                .iter()
                .map(|c| format!("{} (margin {:.3e})", c.name, c.margin))
                .collect();
            return Err(TrackerError::Numerical(format!(
                "uniqueness conditions failed: {}",
                failed.join(", ")
            )));
        }
    }

    // The nominal tolerance is absolute; once deltas shrink to the floating
    // point resolution of the budget the iterates can only cycle between
    // neighboring representable values, so stationarity at that scale counts
    // as converged.
    let resolution = 4.0 * f64::EPSILON * budget.abs();
    let effective_tol = opts.tol.max(resolution);

    let mut v_old = 0.0;
    let mut v_new = budget - cost_of(model, ctx, v_old)?;
    let mut iterations: u32 = 1;
    while (v_new - v_old).abs() >= effective_tol {
        if iterations >= opts.max_iter {
            return Err(TrackerError::Numerical(format!(
                "fixed-point iteration did not converge within {} steps (last delta {:.3e}, contraction coeff {:.3e})",
                opts.max_iter,
                (v_new - v_old).abs(),
                contraction_coeff(model, ctx)
            )));
        }
        v_old = v_new;
        v_new = budget - cost_of(model, ctx, v_old)?;
        iterations += 1;
    }

    let v_after = v_new;
    if v_after <= 0.0 {
        return Err(TrackerError::Numerical(format!(
            "post-rebalance value {v_after} is not positive; conditions were violated"
        )));
    }

    let cost = budget - v_after;
    let residual = (cost_of(model, ctx, v_after)? - cost).abs();
    let shares_after = ctx
        .w_target
        .iter()
        .zip(&ctx.prices)
        .map(|(w, p)| w * v_after / p)
        .collect();

    Ok(RebalanceOutcome {
        v_after,
        shares_after,
        cost,
        h: ctx.h,
        iterations,
        residual,
    })
}

/// Day-by-day record of one simulated period.
#[derive(Debug, Clone, Default)]
pub struct PeriodRecord {
    /// Portfolio value right before rebalancing, one entry per day `0..=K`
    /// where entry `K` is the mark at the first day of the next period.
    pub values_before: Vec<f64>,
    /// Transaction cost charged on each day `0..K` (zero off the stride).
    pub costs: Vec<f64>,
    /// Cash injected on each day `0..K`.
    pub cash_flows: Vec<f64>,
    /// Shares traded (sum of absolute share changes) on each day `0..K`.
    pub traded_shares: Vec<f64>,
}

/// Simulate the days of one period under fixed target weights.
///
/// `prices` has `K + 1` rows: rows `0..K` are the in-period trading days and
/// row `K` is the next period's first day, used only for the closing mark.
/// The portfolio is rebalanced on days `k` with `k % stride == 0`; shares are
/// held constant in between. Returns the end-of-period state (valued at row
/// `K` prices, not yet rebalanced) and the per-day record.
pub fn simulate_period(
    state: &PortfolioState,
    prices: &[Vec<f64>],
    index_levels: &[f64],
    w_target: &[f64],
    cash: Option<&CashRule>,
    model: &CostModel,
    stride: usize,
    opts: &SolverOptions,
) -> Result<(PortfolioState, PeriodRecord)> {
    if prices.len() < 2 {
        return Err(TrackerError::Config(
            "simulate_period needs at least one trading day plus the closing mark".into(),
        ));
    }
    if index_levels.len() != prices.len() {
        return Err(TrackerError::Config(format!(
            "{} price rows but {} index levels",
            prices.len(),
            index_levels.len()
        )));
    }
    if stride == 0 {
        return Err(TrackerError::Config("rebalancing stride must be >= 1".into()));
    }

    let days = prices.len() - 1;
    let mut current = state.clone();
    let mut record = PeriodRecord {
        values_before: Vec::with_capacity(days + 1),
        costs: vec![0.0; days],
        cash_flows: vec![0.0; days],
        traded_shares: vec![0.0; days],
    };

    for k in 0..days {
        let p = &prices[k];
        let v_before = current.value(p);
        record.values_before.push(v_before);

        if k % stride != 0 {
            continue;
        }

        let h = match cash {
            Some(rule) => cash_flow(rule, index_levels[k], v_before),
            None => 0.0,
        };
        let ctx = RebalanceContext {
            prices: p.clone(),
            v_before_i: current.stock_values(p),
            v_before,
            w_target: w_target.to_vec(),
            h,
        };
        let outcome = solve_fixed_point(model, &ctx, opts).map_err(|e| {
            TrackerError::Numerical(format!("rebalance failed on period day {k}: {e}"))
        })?;

        record.costs[k] = outcome.cost;
        record.cash_flows[k] = h;
        record.traded_shares[k] = outcome
            .shares_after
            .iter()
            .zip(&current.shares)
            .map(|(a, b)| (a - b).abs())
            .sum();

        current.shares = outcome.shares_after;
        current.cash = 0.0;
    }

    record.values_before.push(current.value(&prices[days]));
    Ok((current, record))
}

/// Wire format for one-off desk verification: a single rebalance instance
/// given as JSON to the `rebalance` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RebalanceInstance {
    pub prices: Vec<f64>,
    pub shares: Vec<f64>,
    #[serde(default)]
    pub cash: f64,
    pub w_target: Vec<f64>,
    #[serde(default)]
    pub h: f64,
    pub cost: crate::backtest::CostConfig,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: u32,
    #[serde(default)]
    pub override_conditions: bool,
    #[serde(default = "default_xi_bound")]
    pub xi_bound: f64,
}

fn default_tol() -> f64 {
    1e-15
}
fn default_max_iter() -> u32 {
    1000
}
fn default_xi_bound() -> f64 {
    0.2
}

/// Solve a standalone instance: derive the context from shares and prices,
/// run the conditions check, and solve.
pub fn run_instance(instance: &RebalanceInstance) -> Result<RebalanceOutcome> {
    let n = instance.prices.len();
    let model = instance.cost.build(n)?;
    let state = PortfolioState {
        shares: instance.shares.clone(),
        cash: instance.cash,
    };
    if state.shares.len() != n {
        return Err(TrackerError::Config(format!(
            "{} share entries for {n} prices",
            state.shares.len()
        )));
    }
    let ctx = RebalanceContext {
        prices: instance.prices.clone(),
        v_before_i: state.stock_values(&instance.prices),
        v_before: state.value(&instance.prices),
        w_target: instance.w_target.clone(),
        h: instance.h,
    };
    let opts = SolverOptions {
        tol: instance.tol,
        max_iter: instance.max_iter,
        override_conditions: instance.override_conditions,
        xi_bound: instance.xi_bound,
    };
    solve_fixed_point(&model, &ctx, &opts)
}
