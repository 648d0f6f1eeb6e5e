//! Stochastic policy: diagonal Gaussian with clipped samples, mapped to
//! portfolio weights through a softmax and to the cash-flow fraction through
//! a rescaled sigmoid.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;

/// Smallest standard deviation fed into log-densities.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Ceiling on the standard deviation, as a multiple of the clip bound.
/// Beyond the box width the clipped samples carry no extra information and
/// the Gaussian score of clipped draws only inflates sigma further.
pub const SIGMA_CAP_MULT: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453;

/// Mean and standard-deviation networks plus the action clip bound. The
/// action dimension is `N` for return tracking and `N + 1` when a cash-flow
/// decision rides along.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyNets {
    pub mean_net: Mlp,
    pub std_net: Mlp,
    /// Clip bound `b`: every action component lies in `[-b, b]`.
    pub b: f64,
}

impl PolicyNets {
    pub fn action_dim(&self) -> usize {
        self.mean_net.spec.output_dim
    }

    /// Mean and clamped standard deviation at a state (frozen batch-norm).
    pub fn mu_sigma(&self, state: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let cap = SIGMA_CAP_MULT * self.b;
        let mu = self.mean_net.eval_forward(state);
        let sigma = self
            .std_net
            .eval_forward(state)
            .into_iter()
            .map(|s| s.clamp(SIGMA_FLOOR, cap))
            .collect();
        (mu, sigma)
    }

    /// Draw a clipped Gaussian action. Returns the action, its diagonal
    /// Gaussian log-density evaluated at the clipped point, and the per-
    /// dimension standard deviations used.
    pub fn sample_action(&self, state: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64, Vec<f64>) {
        let (mu, sigma) = self.mu_sigma(state);
        let action: Vec<f64> = mu
            .iter()
            .zip(&sigma)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                (m + s * z).clamp(-self.b, self.b)
            })
            .collect();
        let logp = diag_gaussian_logp(&action, &mu, &sigma);
        (action, logp, sigma)
    }

    /// Deterministic action: the clipped mean.
    pub fn deterministic_action(&self, state: &[f64]) -> Vec<f64> {
        self.mean_net
            .eval_forward(state)
            .into_iter()
            .map(|m| m.clamp(-self.b, self.b))
            .collect()
    }
}

/// Diagonal Gaussian log-density. The behavior and current policies both
/// evaluate it at the stored (clipped) action, so the PPO ratio stays
/// consistent.
pub fn diag_gaussian_logp(action: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    action
        .iter()
        .zip(mu.iter().zip(sigma))
        .map(|(a, (m, s))| {
            let z = (a - m) / s;
            -s.ln() - 0.5 * LN_2PI - 0.5 * z * z
        })
        .sum()
}

/// Long-only weights from the first `N` action components.
pub fn action_to_weights(a: &[f64]) -> Vec<f64> {
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn sigmoid(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

/// Cash-flow fraction from the last action component: `b_f * sig(a) /
/// sig(b)`, which covers `(0, b_f]` for `|a| <= b`.
pub fn action_to_f(a_last: f64, b: f64, b_f: f64) -> f64 {
    b_f * sigmoid(a_last) / sigmoid(b)
}
