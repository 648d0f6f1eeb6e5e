//! Tracking errors, RL rewards, and the out-of-sample report metrics.

use serde::{Deserialize, Serialize};

use crate::cost::neg_part;
use crate::error::{Result, TrackerError};

/// How per-day deviations enter the error: absolute value for plain
/// tracking, negative part only for index enhancement (under-performance
/// penalized, out-performance free).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    Absolute,
    NegativePartOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    ReturnBased,
    ValueBased,
}

/// Tracking-error objective: which series is compared, the power of the
/// q-mean, the deviation penalty, and the reward rescaling factor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ErrorSpec {
    pub kind: ErrorKind,
    pub q: f64,
    pub penalty: Penalty,
    pub beta: f64,
}

impl ErrorSpec {
    pub fn return_based() -> Self {
        ErrorSpec {
            kind: ErrorKind::ReturnBased,
            q: 2.0,
            penalty: Penalty::Absolute,
            beta: 1000.0,
        }
    }

    pub fn value_based() -> Self {
        ErrorSpec {
            kind: ErrorKind::ValueBased,
            q: 2.0,
            penalty: Penalty::Absolute,
            beta: 0.001,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0) || !(self.beta > 0.0) {
            return Err(TrackerError::Config(format!(
                "error spec needs q > 0 and beta > 0, got q = {}, beta = {}",
                self.q, self.beta
            )));
        }
        Ok(())
    }
}

fn q_mean(devs: impl Iterator<Item = f64>, q: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for d in devs {
        sum += d.powf(q);
        count += 1;
    }
    if count == 0 {
        return Err(TrackerError::Data("tracking error over an empty series".into()));
    }
    Ok((sum / count as f64).powf(1.0 / q))
}

fn deviation(diff: f64, penalty: Penalty) -> f64 {
    match penalty {
        Penalty::Absolute => diff.abs(),
        Penalty::NegativePartOnly => neg_part(diff),
    }
}

/// Return-based tracking error: q-mean of per-day deviations between
/// portfolio and index simple returns.
pub fn r_te(r_tp: &[f64], r_idx: &[f64], q: f64, penalty: Penalty) -> Result<f64> {
    if r_tp.len() != r_idx.len() {
        return Err(TrackerError::Data(format!(
            "return series lengths differ: {} vs {}",
            r_tp.len(),
            r_idx.len()
        )));
    }
    q_mean(
        r_tp.iter()
            .zip(r_idx)
            .map(|(a, b)| deviation(a - b, penalty)),
        q,
    )
}

/// Value-based tracking error in index points: q-mean of per-day deviations
/// between per-fund-share value and index level.
pub fn v_te(v_before: &[f64], idx: &[f64], n0: f64, q: f64, penalty: Penalty) -> Result<f64> {
    if v_before.len() != idx.len() {
        return Err(TrackerError::Data(format!(
            "value series lengths differ: {} vs {}",
            v_before.len(),
            idx.len()
        )));
    }
    if !(n0 > 0.0) {
        return Err(TrackerError::Config(format!("fund share count n0 = {n0} must be positive")));
    }
    q_mean(
        v_before
            .iter()
            .zip(idx)
            .map(|(v, i)| deviation(v / n0 - i, penalty)),
        q,
    )
}

/// One period of before-rebalance marks: entry `0` is the period start, the
/// remaining entries are the days the tracking error runs over.
#[derive(Debug, Clone, Copy)]
pub struct PeriodSeries<'a> {
    pub values_before: &'a [f64],
    pub index_levels: &'a [f64],
    pub n0: f64,
}

/// Tracking error of one period under the spec's kind (days `1..` of the
/// series; day 0 only serves as the return base).
pub fn tracking_error(spec: &ErrorSpec, series: &PeriodSeries) -> Result<f64> {
    let v = series.values_before;
    let i = series.index_levels;
    if v.len() != i.len() || v.len() < 2 {
        return Err(TrackerError::Data(format!(
            "period series needs >= 2 aligned entries, got {} values and {} levels",
            v.len(),
            i.len()
        )));
    }
    match spec.kind {
        ErrorKind::ReturnBased => {
            let r_tp: Vec<f64> = (1..v.len()).map(|k| v[k] / v[k - 1] - 1.0).collect();
            let r_ix: Vec<f64> = (1..i.len()).map(|k| i[k] / i[k - 1] - 1.0).collect();
            r_te(&r_tp, &r_ix, spec.q, spec.penalty)
        }
        ErrorKind::ValueBased => v_te(&v[1..], &i[1..], series.n0, spec.q, spec.penalty),
    }
}

/// Per-period RL reward: the rescaled negative tracking error.
pub fn reward(spec: &ErrorSpec, series: &PeriodSeries) -> Result<f64> {
    Ok(-spec.beta * tracking_error(spec, series)?)
}

/// One day of an evaluation trajectory. Entry 0 of a trajectory is the
/// window start (return base); flows, costs, and volumes are attributed to
/// the day they occur and summed from day 1 onward, so the initial
/// portfolio acquisition is excluded from the window totals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayRecord {
    pub date: String,
    pub value_before: f64,
    pub index_level: f64,
    pub h: f64,
    pub cost: f64,
    pub traded_shares: f64,
    /// Simple rate from this day to the next.
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub n0: f64,
    pub days: Vec<DayRecord>,
}

/// Window-level report metrics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BacktestMetrics {
    pub r_te: f64,
    pub v_te: f64,
    /// Total cash injection.
    pub cf: f64,
    /// Cash injection with each flow accrued at the T-bill rate to the end
    /// of the window (the final day's flow accrues one day).
    pub cf_adj: f64,
    /// Total transaction cost.
    pub tc: f64,
    /// Total shares traded.
    pub vol: f64,
}

pub fn backtest_metrics(trajectory: &Trajectory, q: f64) -> Result<BacktestMetrics> {
    let days = &trajectory.days;
    if days.len() < 2 {
        return Err(TrackerError::Data(
            "trajectory needs at least the window start plus one day".into(),
        ));
    }
    let values: Vec<f64> = days.iter().map(|d| d.value_before).collect();
    let levels: Vec<f64> = days.iter().map(|d| d.index_level).collect();
    let series = PeriodSeries {
        values_before: &values,
        index_levels: &levels,
        n0: trajectory.n0,
    };
    let r = tracking_error(
        &ErrorSpec {
            kind: ErrorKind::ReturnBased,
            q,
            penalty: Penalty::Absolute,
            beta: 1.0,
        },
        &series,
    )?;
    let v = tracking_error(
        &ErrorSpec {
            kind: ErrorKind::ValueBased,
            q,
            penalty: Penalty::Absolute,
            beta: 1.0,
        },
        &series,
    )?;

    let last = days.len() - 1;
    let mut cf = 0.0;
    let mut tc = 0.0;
    let mut vol = 0.0;
    for rec in &days[1..] {
        cf += rec.h;
        tc += rec.cost;
        vol += rec.traded_shares;
    }
    // Backward pass: flow at day k accrues over days k..last-1.
    let mut cf_adj = 0.0;
    let mut acc = 1.0;
    for k in (1..=last - 1).rev() {
        acc *= 1.0 + days[k].rate;
        cf_adj += acc * days[k].h;
    }
    // The final entry carries no rebalance (it is the next window's first
    // mark); keep its contribution for trajectories that end on a flow day.
    cf_adj += days[last].h * (1.0 + days[last].rate);

    Ok(BacktestMetrics {
        r_te: r,
        v_te: v,
        cf,
        cf_adj,
        tc,
        vol,
    })
}
