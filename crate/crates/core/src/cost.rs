//! Transaction-cost models evaluated as functions of the unknown
//! post-rebalance portfolio value, plus the contraction diagnostics that
//! guarantee the fixed-point solve is well posed.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrackerError};

/// Negative part, `x^- = max(0, -x)`.
#[inline]
pub fn neg_part(x: f64) -> f64 {
    (-x).max(0.0)
}

/// Per-stock coefficient that may be given as a scalar (broadcast to all
/// stocks) or as one value per stock.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coeff {
    Scalar(f64),
    PerStock(Vec<f64>),
}

impl Coeff {
    pub fn expand(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Coeff::Scalar(v) => Ok(vec![*v; n]),
            Coeff::PerStock(vs) if vs.len() == n => Ok(vs.clone()),
            Coeff::PerStock(vs) => Err(TrackerError::Config(format!(
                "coefficient vector has {} entries but the universe has {} stocks",
                vs.len(),
                n
            ))),
        }
    }
}

impl From<f64> for Coeff {
    fn from(v: f64) -> Self {
        Coeff::Scalar(v)
    }
}

/// Cost-model variants with expanded per-stock coefficient vectors.
///
/// `BrokerMinMax` is the per-share fee `xi1` floored at `xi3` and capped at
/// proportion `xi2` of trade value. `WithRegFees` adds the SEC levy `nu1` on
/// sale value and the FINRA levy `nu2` on shares sold. `FixedPlusProportional`
/// charges `xi3` per stock unconditionally plus proportion `xi4` of trade
/// value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CostModel {
    BrokerMinMax {
        xi1: Vec<f64>,
        xi2: Vec<f64>,
        xi3: Vec<f64>,
    },
    BrokerMinMaxWithRegFees {
        xi1: Vec<f64>,
        xi2: Vec<f64>,
        xi3: Vec<f64>,
        nu1: f64,
        nu2: f64,
    },
    FixedPlusProportional {
        xi3: Vec<f64>,
        xi4: Vec<f64>,
    },
}

/// IB Pro-Fixed retail schedule: 0.005 USD/share, 0.5% cap, 1 USD minimum.
pub const IB_XI1: f64 = 0.005;
pub const IB_XI2: f64 = 0.005;
pub const IB_XI3: f64 = 1.0;

/// Current SEC / FINRA levies on sales.
pub const SEC_NU1: f64 = 0.0000229;
pub const FINRA_NU2: f64 = 0.00013;

impl CostModel {
    /// IB Pro-Fixed broker schedule broadcast over `n` stocks.
    pub fn ib_pro_fixed(n: usize) -> Self {
        CostModel::BrokerMinMax {
            xi1: vec![IB_XI1; n],
            xi2: vec![IB_XI2; n],
            xi3: vec![IB_XI3; n],
        }
    }

    /// IB schedule plus current SEC/FINRA regulatory fees.
    pub fn ib_with_reg_fees(n: usize) -> Self {
        CostModel::BrokerMinMaxWithRegFees {
            xi1: vec![IB_XI1; n],
            xi2: vec![IB_XI2; n],
            xi3: vec![IB_XI3; n],
            nu1: SEC_NU1,
            nu2: FINRA_NU2,
        }
    }

    /// Costless trading (fixed and proportional parts both zero).
    pub fn zero(n: usize) -> Self {
        CostModel::FixedPlusProportional {
            xi3: vec![0.0; n],
            xi4: vec![0.0; n],
        }
    }

    pub fn n_stocks(&self) -> usize {
        match self {
            CostModel::BrokerMinMax { xi1, .. } => xi1.len(),
            CostModel::BrokerMinMaxWithRegFees { xi1, .. } => xi1.len(),
            CostModel::FixedPlusProportional { xi3, .. } => xi3.len(),
        }
    }

    fn validate_nonnegative(&self) -> Result<()> {
        let check = |name: &str, vs: &[f64]| -> Result<()> {
            for (i, v) in vs.iter().enumerate() {
                if !v.is_finite() || *v < 0.0 {
                    return Err(TrackerError::Config(format!(
                        "cost coefficient {name}[{i}] = {v} must be finite and non-negative"
                    )));
                }
            }
            Ok(())
        };
        match self {
            CostModel::BrokerMinMax { xi1, xi2, xi3 } => {
                check("xi1", xi1)?;
                check("xi2", xi2)?;
                check("xi3", xi3)
            }
            CostModel::BrokerMinMaxWithRegFees {
                xi1,
                xi2,
                xi3,
                nu1,
                nu2,
            } => {
                check("xi1", xi1)?;
                check("xi2", xi2)?;
                check("xi3", xi3)?;
                check("nu1", &[*nu1])?;
                check("nu2", &[*nu2])
            }
            CostModel::FixedPlusProportional { xi3, xi4 } => {
                check("xi3", xi3)?;
                check("xi4", xi4)
            }
        }
    }

    /// Validate coefficients and consistency with an `n`-stock universe.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_stocks() != n {
            return Err(TrackerError::Config(format!(
                "cost model covers {} stocks but the universe has {n}",
                self.n_stocks()
            )));
        }
        self.validate_nonnegative()
    }
}

/// Everything observable at a rebalancing instant. The unknowns solved for
/// downstream are the post-rebalance value and shares.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RebalanceContext {
    /// Stock prices at the rebalance instant, strictly positive.
    pub prices: Vec<f64>,
    /// Per-stock dollar values right before the rebalance.
    pub v_before_i: Vec<f64>,
    /// Total pre-rebalance portfolio value (stocks plus any cash).
    pub v_before: f64,
    /// Target weights right after the rebalance.
    pub w_target: Vec<f64>,
    /// Cash injected (negative for a withdrawal) at this instant.
    pub h: f64,
}

impl RebalanceContext {
    pub fn n_stocks(&self) -> usize {
        self.prices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.prices.len();
        if self.v_before_i.len() != n || self.w_target.len() != n {
            return Err(TrackerError::Config(format!(
                "context dimensions disagree: {} prices, {} values, {} weights",
                n,
                self.v_before_i.len(),
                self.w_target.len()
            )));
        }
        for (i, p) in self.prices.iter().enumerate() {
            if !p.is_finite() || *p <= 0.0 {
                return Err(TrackerError::Data(format!(
                    "price[{i}] = {p} must be finite and strictly positive"
                )));
            }
        }
        if !self.v_before.is_finite() || !self.h.is_finite() {
            return Err(TrackerError::Data(
                "non-finite pre-rebalance value or cash flow".into(),
            ));
        }
        for (i, w) in self.w_target.iter().enumerate() {
            if !w.is_finite() {
                return Err(TrackerError::Data(format!("target weight[{i}] is not finite")));
            }
        }
        Ok(())
    }
}

/// Exact transaction cost charged when the post-rebalance value is `v_after`.
pub fn cost_of(model: &CostModel, ctx: &RebalanceContext, v_after: f64) -> Result<f64> {
    if !v_after.is_finite() {
        return Err(TrackerError::Numerical(format!(
            "cost_of called with non-finite candidate value {v_after}"
        )));
    }
    let n = ctx.n_stocks();
    debug_assert_eq!(model.n_stocks(), n);
    let cost = match model {
        CostModel::BrokerMinMax { xi1, xi2, xi3 } => {
            broker_min_max_cost(ctx, v_after, xi1, xi2, xi3)
        }
        CostModel::BrokerMinMaxWithRegFees {
            xi1,
            xi2,
            xi3,
            nu1,
            nu2,
        } => {
            broker_min_max_cost(ctx, v_after, xi1, xi2, xi3)
                + regulatory_fees(ctx, v_after, *nu1, *nu2)
        }
        CostModel::FixedPlusProportional { xi3, xi4 } => (0..n)
            .map(|i| {
                let trade = (ctx.w_target[i] * v_after - ctx.v_before_i[i]).abs();
                xi3[i] + xi4[i] * trade
            })
            .sum(),
    };
    Ok(cost)
}

fn broker_min_max_cost(
    ctx: &RebalanceContext,
    v_after: f64,
    xi1: &[f64],
    xi2: &[f64],
    xi3: &[f64],
) -> f64 {
    (0..ctx.n_stocks())
        .map(|i| {
            let trade = (ctx.v_before_i[i] - ctx.w_target[i] * v_after).abs();
            let per_share = xi1[i] / ctx.prices[i] * trade;
            per_share.max(xi3[i]).min(xi2[i] * trade)
        })
        .sum()
}

fn regulatory_fees(ctx: &RebalanceContext, v_after: f64, nu1: f64, nu2: f64) -> f64 {
    let mut sec = 0.0;
    let mut finra = 0.0;
    for i in 0..ctx.n_stocks() {
        let delta = ctx.w_target[i] * v_after - ctx.v_before_i[i];
        sec += neg_part(delta);
        finra += neg_part(delta / ctx.prices[i]);
    }
    nu1 * sec + nu2 * finra
}

/// Lipschitz constant of `v -> cost_of(v)` under the model's variant, taken
/// over the target weights.
pub fn contraction_coeff(model: &CostModel, ctx: &RebalanceContext) -> f64 {
    contraction_coeff_for(model, &ctx.prices, &ctx.w_target)
}

fn contraction_coeff_for(model: &CostModel, prices: &[f64], weights: &[f64]) -> f64 {
    match model {
        CostModel::BrokerMinMax { xi1, xi2, .. } => weights
            .iter()
            .enumerate()
            .map(|(i, w)| (xi1[i] / prices[i] + xi2[i]) * w.abs())
            .sum(),
        CostModel::BrokerMinMaxWithRegFees {
            xi1,
            xi2,
            nu1,
            nu2,
            ..
        } => weights
            .iter()
            .enumerate()
            .map(|(i, w)| (xi1[i] / prices[i] + xi2[i] + nu1 + nu2 / prices[i]) * w.abs())
            .sum(),
        CostModel::FixedPlusProportional { xi4, .. } => weights
            .iter()
            .enumerate()
            .map(|(i, w)| xi4[i] * w.abs())
            .sum(),
    }
}

/// One solvability condition with its computed slack; `margin > 0` passes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
}

/// Pass/fail report for the uniqueness conditions of the rebalancing
/// equation under the given variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub conditions: Vec<Condition>,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Condition> {
        self.conditions.iter().filter(|c| !c.passed).collect()
    }
}

/// Evaluate the solvability conditions: positive pre-rebalance value, the
/// weighted coefficient sum on before-weights below one, the contraction
/// coefficient on target weights below one, and the cash-withdrawal bound
/// `h >= -xi_bound * v_before` with `xi_bound` inside its admissible
/// interval.
pub fn check_conditions(
    model: &CostModel,
    ctx: &RebalanceContext,
    w_before: &[f64],
    xi_bound: f64,
) -> ConditionReport {
    let mut conditions = Vec::with_capacity(5);

    conditions.push(Condition {
        name: "positive_value_before".into(),
        passed: ctx.v_before > 0.0,
        margin: ctx.v_before,
    });

    // Sum over before-weights of the variant's "before" coefficients. For the
    // fixed-plus-proportional form the fixed fees also eat into the bound.
    let before_sum = match model {
        CostModel::BrokerMinMax { xi2, .. } => w_before
            .iter()
            .enumerate()
            .map(|(i, w)| xi2[i] * w.abs())
            .sum::<f64>(),
        CostModel::BrokerMinMaxWithRegFees { xi2, nu1, nu2, .. } => w_before
            .iter()
            .enumerate()
            .map(|(i, w)| (xi2[i] + nu1 + nu2 / ctx.prices[i]) * w.abs())
            .sum::<f64>(),
        CostModel::FixedPlusProportional { xi3, xi4 } => {
            let weight_part: f64 = w_before
                .iter()
                .enumerate()
                .map(|(i, w)| xi4[i] * w.abs())
                .sum();
            let fixed_part = if ctx.v_before > 0.0 {
                xi3.iter().sum::<f64>() / ctx.v_before
            } else {
                f64::INFINITY
            };
            weight_part + fixed_part
        }
    };
    conditions.push(Condition {
        name: "before_weight_sum".into(),
        passed: before_sum < 1.0,
        margin: 1.0 - before_sum,
    });

    let kappa = contraction_coeff(model, ctx);
    conditions.push(Condition {
        name: "contraction_coeff".into(),
        passed: kappa < 1.0,
        margin: 1.0 - kappa,
    });

    let xi_admissible = xi_bound > 0.0 && xi_bound < 1.0 - before_sum;
    conditions.push(Condition {
        name: "xi_admissible".into(),
        passed: xi_admissible,
        margin: (1.0 - before_sum - xi_bound).min(xi_bound),
    });

    let cash_margin = ctx.h + xi_bound * ctx.v_before;
    conditions.push(Condition {
        name: "cash_bound".into(),
        passed: cash_margin >= 0.0,
        margin: cash_margin,
    });

    ConditionReport { conditions }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_1(v_after_target_weight: f64) -> RebalanceContext {
        RebalanceContext {
            prices: vec![10.0],
            v_before_i: vec![1000.0],
            v_before: 1000.0,
            w_target: vec![v_after_target_weight],
            h: 0.0,
        }
    }

    #[test]
    fn no_trade_costs_nothing() {
        // Weights already on target: every trade leg is zero, so the xi2 cap
        // pins each min{max{0, xi3}, 0} at zero.
        let model = CostModel::ib_pro_fixed(2);
        let ctx = RebalanceContext {
            prices: vec![10.0, 20.0],
            v_before_i: vec![600.0, 400.0],
            v_before: 1000.0,
            w_target: vec![0.6, 0.4],
            h: 0.0,
        };
        let c = cost_of(&model, &ctx, 1000.0).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn ib_hand_evaluated_single_stock() {
        // Trade value 100: per-share leg 0.005/10*100 = 0.05, floored at 1.0,
        // then capped at 0.005*100 = 0.5.
        let model = CostModel::ib_pro_fixed(1);
        let ctx = ctx_1(1.0);
        let c = cost_of(&model, &ctx, 900.0).unwrap();
        assert!((c - 0.5).abs() < 1e-15, "expected 0.5, got {c}");
    }

    #[test]
    fn fixed_fee_charged_unconditionally() {
        let model = CostModel::FixedPlusProportional {
            xi3: vec![1.0, 1.0],
            xi4: vec![0.0, 0.0],
        };
        let ctx = RebalanceContext {
            prices: vec![10.0, 20.0],
            v_before_i: vec![500.0, 500.0],
            v_before: 1000.0,
            w_target: vec![0.5, 0.5],
            h: 0.0,
        };
        // Any trade (even none for one leg) pays both fixed fees.
        assert_eq!(cost_of(&model, &ctx, 950.0).unwrap(), 2.0);
        assert_eq!(cost_of(&model, &ctx, 1000.0).unwrap(), 2.0);
    }

    #[test]
    fn contraction_coeff_matches_hand_sums() {
        let ctx = ctx_1(1.0);
        let minmax = CostModel::ib_pro_fixed(1);
        assert!((contraction_coeff(&minmax, &ctx) - 0.0055).abs() < 1e-15);

        let reg = CostModel::ib_with_reg_fees(1);
        let expected = 0.0055 + 0.0000229 + 0.0013 / 10.0 * 0.1; // nu2/p = 0.000013
        assert!((contraction_coeff(&reg, &ctx) - expected).abs() < 1e-12);
        assert!((contraction_coeff(&reg, &ctx) - 0.0055359).abs() < 1e-10);
    }

    #[test]
    fn null_weights_give_zero_coefficient() {
        let ctx = RebalanceContext {
            prices: vec![10.0, 5.0],
            v_before_i: vec![0.0, 0.0],
            v_before: 100.0,
            w_target: vec![0.0, 0.0],
            h: 0.0,
        };
        let model = CostModel::ib_pro_fixed(2);
        assert_eq!(contraction_coeff(&model, &ctx), 0.0);
    }

    #[test]
    fn reg_fees_dominate_plain_broker_cost() {
        let plain = CostModel::ib_pro_fixed(2);
        let reg = CostModel::ib_with_reg_fees(2);
        let ctx = RebalanceContext {
            prices: vec![25.0, 75.0],
            v_before_i: vec![300.0, 700.0],
            v_before: 1000.0,
            w_target: vec![0.5, 0.5],
            h: 0.0,
        };
        for v in [0.0, 450.0, 990.0, 1000.0, 1100.0] {
            let a = cost_of(&plain, &ctx, v).unwrap();
            let b = cost_of(&reg, &ctx, v).unwrap();
            assert!(b >= a, "regulatory fees must not reduce cost at v={v}");
        }
    }

    #[test]
    fn fixed_prop_matches_cap_branch_when_cap_active() {
        // With xi3 = 0 and xi4 = xi2, the fixed+proportional form coincides
        // with the broker cost whenever the xi2 cap binds for every stock.
        let xi2 = 0.004;
        let minmax = CostModel::BrokerMinMax {
            xi1: vec![0.005, 0.005],
            xi2: vec![xi2, xi2],
            xi3: vec![1.0, 1.0],
        };
        let prop = CostModel::FixedPlusProportional {
            xi3: vec![0.0, 0.0],
            xi4: vec![xi2, xi2],
        };
        // Sub-1.25 prices keep the per-share leg above the cap, and trades
        // above 250 keep it above the minimum fee, so the cap always binds.
        let ctx = RebalanceContext {
            prices: vec![1.0, 1.2],
            v_before_i: vec![2000.0, 8000.0],
            v_before: 10000.0,
            w_target: vec![0.5, 0.5],
            h: 0.0,
        };
        let v = 9000.0;
        let a = cost_of(&minmax, &ctx, v).unwrap();
        let b = cost_of(&prop, &ctx, v).unwrap();
        assert!((a - b).abs() < 1e-12, "cap branch mismatch: {a} vs {b}");
    }

    #[test]
    fn condition_report_flags_forced_violations() {
        let ctx = RebalanceContext {
            prices: vec![10.0],
            v_before_i: vec![1000.0],
            v_before: 1000.0,
            w_target: vec![1.0],
            h: 0.0,
        };
        let bad = CostModel::BrokerMinMax {
            xi1: vec![0.005],
            xi2: vec![2.0],
            xi3: vec![1.0],
        };
        let report = check_conditions(&bad, &ctx, &[1.0], 0.2);
        let contraction = report
            .conditions
            .iter()
            .find(|c| c.name == "contraction_coeff")
            .unwrap();
        assert!(!contraction.passed);
        assert!(contraction.margin < 0.0, "margin must expose the violation");

        let good = CostModel::ib_pro_fixed(1);
        let ok = check_conditions(&good, &ctx, &[1.0], 0.2);
        assert!(ok.all_pass(), "IB coefficients should pass: {:?}", ok.failures());

        let mut withdraw = ctx.clone();
        withdraw.h = -0.9 * withdraw.v_before;
        let cash = check_conditions(&good, &withdraw, &[1.0], 0.5);
        let bound = cash
            .conditions
            .iter()
            .find(|c| c.name == "cash_bound")
            .unwrap();
        assert!(!bound.passed, "h = -0.9 v with cap 0.5 must fail the bound");
    }

    #[test]
    fn cost_rejects_non_finite_value() {
        let model = CostModel::ib_pro_fixed(1);
        let ctx = ctx_1(1.0);
        assert!(cost_of(&model, &ctx, f64::NAN).is_err());
        assert!(cost_of(&model, &ctx, f64::INFINITY).is_err());
    }
}
