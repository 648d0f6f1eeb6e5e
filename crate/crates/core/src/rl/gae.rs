//! Generalized advantage estimation over collected episodes, including the
//! truncated-episode boundary where the last step carries a partial-period
//! reward and bootstraps from the value at the end of the training range.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrackerError};

/// One experience tuple. `v_t1` is the value estimate of this step's
/// successor; for the final step of an episode that is the terminal state
/// (either `s_{t0+n}` or `s_{T_train}` when truncated), whose value is never
/// assumed zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub v_t: f64,
    pub v_t1: f64,
    pub logp: f64,
    pub std: Vec<f64>,
    pub advantage: f64,
    /// Return target for the value loss.
    pub ret: f64,
    /// Set when this step hit the end of the training data with a partial
    /// period.
    pub truncated: bool,
}

/// Fill `advantage` and `ret` for one ordered episode.
///
/// TD residuals use each step's stored successor value, advantages are the
/// exponentially weighted residual sums, and return targets accumulate
/// discounted rewards plus the discounted terminal value.
pub fn compute_gae(episode: &mut [Transition], gamma: f64, lambda: f64) -> Result<()> {
    if episode.is_empty() {
        return Err(TrackerError::Numerical("empty episode in GAE pass".into()));
    }
    let last = episode.len() - 1;
    let terminal_value = episode[last].v_t1;

    let mut adv_acc = 0.0;
    let mut ret_acc = terminal_value;
    for l in (0..episode.len()).rev() {
        let t = &episode[l];
        let delta = t.reward + gamma * t.v_t1 - t.v_t;
        adv_acc = delta + gamma * lambda * adv_acc;
        ret_acc = t.reward + gamma * ret_acc;
        let t = &mut episode[l];
        t.advantage = adv_acc;
        t.ret = ret_acc;
    }
    let _ = terminal_value;
    Ok(())
}
