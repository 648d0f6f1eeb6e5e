//! PPO losses with hand-derived gradients, and the Adam optimizer driving
//! the updates.

use serde::{Deserialize, Serialize};

use super::gae::Transition;
use super::mlp::Mlp;
use super::policy::{PolicyNets, SIGMA_CAP_MULT, SIGMA_FLOOR};
use crate::error::{Result, TrackerError};

const LN_2PI: f64 = 1.8378770664093453;

/// PPO hyperparameters. Defaults follow the published training setup; the
/// episode length lives on the time grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoHyper {
    /// Discount factor.
    pub gamma: f64,
    /// GAE mixing parameter.
    pub lambda: f64,
    /// Clip radius for the probability ratio.
    pub epsilon: f64,
    /// Value-loss weight.
    pub e1: f64,
    /// Entropy-loss weight.
    pub e2: f64,
    /// Adam learning rate.
    pub lr: f64,
    /// Training epochs (H).
    pub epochs: usize,
    /// Episodes collected per worker per epoch (K).
    pub episodes_per_epoch: usize,
    /// Minibatch size (n-tilde); buffer remainders below it are dropped.
    pub minibatch: usize,
    /// Parallel rollout workers (M-tilde).
    pub workers: usize,
    /// Probability of drawing the episode start from the early range.
    pub zeta: f64,
    /// Split day separating early and late start ranges, in trading days
    /// from the start of the training range; `None` uses the published
    /// ceil(3 (D - 1) / 4) rule.
    pub t0_split_days: Option<usize>,
    /// Standardize advantages over each epoch's buffer before the gradient
    /// steps. Rewards here are always negative, so until the value net
    /// calibrates every advantage shares one sign, and with clipped actions
    /// that inflates sigma without bound.
    pub normalize_advantages: bool,
}

impl Default for PpoHyper {
    fn default() -> Self {
        PpoHyper {
            gamma: 0.99,
            lambda: 0.95,
            epsilon: 0.2,
            e1: 0.5,
            e2: 0.0,
            lr: 1e-5,
            epochs: 200_000,
            episodes_per_epoch: 50,
            minibatch: 64,
            workers: 8,
            zeta: 0.25,
            t0_split_days: None,
            normalize_advantages: true,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.gamma) || !in_unit(self.lambda) {
            return Err(TrackerError::Config(format!(
                "gamma and lambda must lie in (0,1): gamma={}, lambda={}",
                self.gamma, self.lambda
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(TrackerError::Config("epsilon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(TrackerError::Config(format!("zeta = {} outside [0,1]", self.zeta)));
        }
        if self.minibatch == 0 || self.workers == 0 || self.episodes_per_epoch == 0 {
            return Err(TrackerError::Config(
                "minibatch, workers, and episodes per epoch must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Adam with the usual bias-corrected moment estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Scalar loss components of one minibatch. `total` is the quantity the
/// optimizer descends: `-clip + e1 * value + e2 * entropy`.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    /// Samples dropped for non-finite ratios.
    pub skipped: usize,
}

/// Gradients of `total` with respect to each network's parameters.
#[derive(Debug, Clone)]
pub struct PpoGrads {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub value: Vec<f64>,
}

/// Evaluate the PPO objective and its exact parameter gradients on one
/// minibatch of transitions with filled advantages and return targets.
///
/// Batch normalization runs on the frozen running statistics: the density
/// must be the same function of the parameters that produced the behavior
/// log-densities, or the ratio compares apples to oranges. The trainer
/// refreshes the running statistics between epochs.
pub fn compute_ppo_losses(
    policy: &PolicyNets,
    value_net: &Mlp,
    batch: &[&Transition],
    hyper: &PpoHyper,
) -> Result<(LossParts, PpoGrads)> {
    if batch.is_empty() {
        return Err(TrackerError::Numerical("empty PPO minibatch".into()));
    }
    let m = batch.len();
    let na = policy.action_dim();
    let input_dim = policy.mean_net.spec.input_dim;
    let mut xs = Vec::with_capacity(m * input_dim);
    for t in batch {
        if t.state.len() != input_dim {
            return Err(TrackerError::Config(format!(
                "transition state of length {} does not match network input {input_dim}",
                t.state.len()
            )));
        }
        if !t.advantage.is_finite() || !t.ret.is_finite() {
            return Err(TrackerError::Numerical(
                "transition reached the optimizer without advantage/return".into(),
            ));
        }
        xs.extend_from_slice(&t.state);
    }

    let (mu, mu_cache) = policy.mean_net.eval_forward_cached(&xs, m);
    let (sigma_raw, sigma_cache) = policy.std_net.eval_forward_cached(&xs, m);
    let (values, value_cache) = value_net.eval_forward_cached(&xs, m);

    // Per-sample ratio bookkeeping. A sample is kept when its ratio is
    // finite; the components average over kept samples only.
    let sigma_cap = SIGMA_CAP_MULT * policy.b;
    let mut kept = vec![true; m];
    let mut ratios = vec![0.0; m];
    let mut skipped = 0usize;
    for s in 0..m {
        let t = batch[s];
        let mut logp_new = 0.0;
        for j in 0..na {
            let sig = sigma_raw[s * na + j].clamp(SIGMA_FLOOR, sigma_cap);
            let z = (t.action[j] - mu[s * na + j]) / sig;
            logp_new += -sig.ln() - 0.5 * LN_2PI - 0.5 * z * z;
        }
        let ratio = (logp_new - t.logp).exp();
        if !ratio.is_finite() {
            kept[s] = false;
            skipped += 1;
            log::warn!("dropping sample with non-finite ratio (logp underflow)");
            continue;
        }
        ratios[s] = ratio;
    }
    let n_kept = m - skipped;
    if n_kept == 0 {
        return Err(TrackerError::Numerical(
            "every sample in the minibatch produced a non-finite ratio".into(),
        ));
    }
    let scale = 1.0 / n_kept as f64;

    let mut clip_sum = 0.0;
    let mut value_sum = 0.0;
    let mut entropy_sum = 0.0;
    let mut dmu = vec![0.0; m * na];
    let mut dsigma = vec![0.0; m * na];
    let mut dvalue = vec![0.0; m];

    for s in 0..m {
        if !kept[s] {
            continue;
        }
        let t = batch[s];
        let ratio = ratios[s];
        let adv = t.advantage;

        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - hyper.epsilon, 1.0 + hyper.epsilon) * adv;
        clip_sum += unclipped.min(clipped);
        // Gradient flows through the ratio only when the unclipped branch
        // attains the min (ties included); otherwise the clipped branch is
        // locally constant in the parameters.
        let gate = if unclipped <= clipped { 1.0 } else { 0.0 };

        let err = values[s] - t.ret;
        value_sum += err * err;
        dvalue[s] = hyper.e1 * 2.0 * err * scale;

        for j in 0..na {
            let raw = sigma_raw[s * na + j];
            let sig = raw.clamp(SIGMA_FLOOR, sigma_cap);
            let diff = t.action[j] - mu[s * na + j];

            entropy_sum += 0.5 + 0.5 * LN_2PI + sig.ln();

            // d(total)/dmu_j = -scale * gate * adv * ratio * dlogp/dmu_j.
            let dlogp_dmu = diff / (sig * sig);
            dmu[s * na + j] = -scale * gate * adv * ratio * dlogp_dmu;

            let dlogp_dsig = diff * diff / (sig * sig * sig) - 1.0 / sig;
            let mut g = -scale * gate * adv * ratio * dlogp_dsig;
            // Entropy term: U = -mean sum(0.5 + 0.5 ln 2pi + ln sigma).
            g += hyper.e2 * (-scale / sig);
            // At a clamp boundary only gradients that pull sigma back into
            // the admissible range pass (a positive gradient shrinks sigma
            // under a descent step).
            let blocked =
                (raw > sigma_cap && g < 0.0) || (raw < SIGMA_FLOOR && g > 0.0);
            if !blocked {
                dsigma[s * na + j] = g;
            }
        }
    }

    let clip = clip_sum * scale;
    let value = value_sum * scale;
    let entropy = -entropy_sum * scale;
    let total = -clip + hyper.e1 * value + hyper.e2 * entropy;

    let mut grads = PpoGrads {
        mean: vec![0.0; policy.mean_net.n_params()],
        std: vec![0.0; policy.std_net.n_params()],
        value: vec![0.0; value_net.n_params()],
    };
    policy.mean_net.backward(&mu_cache, &dmu, &mut grads.mean);
    policy.std_net.backward(&sigma_cache, &dsigma, &mut grads.std);
    value_net.backward(&value_cache, &dvalue, &mut grads.value);

    Ok((
        LossParts {
            clip,
            value,
            entropy,
            total,
            skipped,
        },
        grads,
    ))
}
