//! Training loop: parallel episode collection on the market environment,
//! advantage estimation, and minibatch PPO updates.
//!
//! One environment step spans one period of `M` trading days: the policy
//! picks weights (and optionally a cash-flow fraction) at the period start,
//! the portfolio is rebalanced through the period at the configured stride,
//! and the reward is the rescaled negative tracking error. Episode starts
//! are drawn on the daily grid, weighted toward the tail of the training
//! range; episodes that run into the end of the data finish on a partial
//! period and bootstrap from the value of the final state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gae::{compute_gae, Transition};
use super::mlp::{Mlp, MlpSpec, OutputActivation};
use super::policy::{action_to_f, action_to_weights, PolicyNets};
use super::ppo::{compute_ppo_losses, Adam, LossParts, PpoHyper};
use crate::cost::CostModel;
use crate::error::{Result, TrackerError};
use crate::market::{build_state_at_day, MarketPanel, StateNormalizer, StateTensor, TimeGrid};
use crate::metrics::{reward, ErrorSpec, PeriodSeries};
use crate::rebalance::{simulate_period, CashRule, PortfolioState, SolverOptions};

/// Stream id offset for the shuffle lane; worker streams are dense from 1.
const SHUFFLE_STREAM_BASE: u64 = 1 << 62;

/// Hidden-layer plan for the three networks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetConfig {
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub batch_norm: bool,
}

impl NetConfig {
    /// Published return-tracking architecture: eight/six hidden layers of
    /// 128 units.
    pub fn paper_return() -> Self {
        NetConfig {
            policy_hidden: vec![128; 8],
            value_hidden: vec![128; 6],
            batch_norm: true,
        }
    }

    /// Published value-tracking architecture: four/two hidden layers of 64.
    pub fn paper_value() -> Self {
        NetConfig {
            policy_hidden: vec![64; 4],
            value_hidden: vec![64; 2],
            batch_norm: true,
        }
    }

    /// Small nets for desk-scale experiments.
    pub fn desk() -> Self {
        NetConfig {
            policy_hidden: vec![32, 32],
            value_hidden: vec![32, 32],
            batch_norm: true,
        }
    }
}

/// Cash-flow control. Present only for the value-tracking problem, where the
/// action picks up an extra dimension.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CashConfig {
    /// Upper bound of the injected fraction.
    pub b_f: f64,
    /// Withdrawal cap as a fraction of portfolio value.
    pub xi_cap: f64,
}

/// Everything a training run needs. The panel must be the training panel:
/// look-back buffer first, then the training days; the last day is the end
/// of the training range.
pub struct TrainSetup<'a> {
    pub panel: &'a MarketPanel,
    pub grid: TimeGrid,
    pub error_spec: ErrorSpec,
    pub hyper: PpoHyper,
    pub nets: NetConfig,
    pub cost: CostModel,
    pub cash: Option<CashConfig>,
    pub solver: SolverOptions,
    /// Initial fund wealth for every episode.
    pub v0: f64,
    pub seed: u64,
    /// Fit and apply per-column state standardization (on by default in run
    /// configs; raw volumes would saturate tanh layers).
    pub normalize: bool,
    /// Warm-start networks (for example the previous window's model);
    /// dimensions must match what this setup would build.
    pub init: Option<(PolicyNets, Mlp)>,
}

/// Trained networks plus everything needed to reproduce their inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub policy: PolicyNets,
    pub value_net: Mlp,
    pub normalizer: StateNormalizer,
    pub grid: TimeGrid,
    pub error_spec: ErrorSpec,
    pub hyper: PpoHyper,
    pub cash: Option<CashConfig>,
    pub tickers: Vec<String>,
    pub seed: u64,
    pub epochs_done: usize,
}

/// Per-epoch training telemetry (averages over the epoch's minibatches).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total_loss: f64,
    pub clip_loss: f64,
    pub value_loss: f64,
    pub entropy_loss: f64,
    pub mean_cum_reward: f64,
    pub transitions: usize,
    pub minibatches: usize,
    pub skipped_samples: usize,
    pub aborted_episodes: usize,
}

/// Draw an episode start on the daily grid: with probability `zeta` uniform
/// over the first `t0_split` days, otherwise uniform over the rest of the
/// training range.
pub fn sample_start_day(
    zeta: f64,
    t0_split: usize,
    train_days: usize,
    rng: &mut impl Rng,
) -> usize {
    if train_days <= 1 {
        return 0;
    }
    let split = t0_split.clamp(1, train_days - 1);
    if rng.gen_bool(zeta) {
        rng.gen_range(0..split)
    } else {
        rng.gen_range(split..train_days)
    }
}

/// Published split rule: `ceil(3 (D - 1) / 4)` trading days.
pub fn default_t0_split(train_days: usize) -> usize {
    if train_days <= 1 {
        return 1;
    }
    (3 * (train_days - 1)).div_ceil(4)
}

fn normalized_state(
    panel: &MarketPanel,
    grid: &TimeGrid,
    day: usize,
    normalizer: &StateNormalizer,
) -> Result<StateTensor> {
    let mut state = build_state_at_day(panel, grid, day)?;
    normalizer.apply(&mut state);
    Ok(state)
}

/// Run one episode from a sampled start day. Returns `None` when the solver
/// aborts the episode (logged and skipped by the caller).
fn collect_episode(
    setup: &TrainSetup,
    normalizer: &StateNormalizer,
    policy: &PolicyNets,
    value_net: &Mlp,
    t0_split: usize,
    train_days: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Vec<Transition>>> {
    let grid = &setup.grid;
    let offset = grid.lookback_days();
    let t_train_day = offset + train_days;
    let n_stocks = setup.panel.n_stocks();

    let d0 = sample_start_day(setup.hyper.zeta, t0_split, train_days, rng);
    let mut day = offset + d0;
    let mut portfolio = PortfolioState::all_cash(n_stocks, setup.v0);
    let n0 = setup.v0 / setup.panel.index_level[day];

    let mut transitions: Vec<Transition> = Vec::new();
    for _ in 0..grid.n {
        let day_end = (day + grid.m).min(t_train_day);
        let state = normalized_state(setup.panel, grid, day, normalizer)?;
        let (action, logp, std) = policy.sample_action(state.flat(), rng);
        let weights = action_to_weights(&action[..n_stocks]);
        let rule = setup.cash.map(|c| CashRule {
            f: action_to_f(action[n_stocks], policy.b, c.b_f),
            xi_cap: c.xi_cap,
            n0,
        });

        let prices = &setup.panel.prices[day..=day_end];
        let index = &setup.panel.index_level[day..=day_end];
        let sim = simulate_period(
            &portfolio,
            prices,
            index,
            &weights,
            rule.as_ref(),
            &setup.cost,
            grid.n_b,
            &setup.solver,
        );
        let (end_state, record) = match sim {
            Ok(v) => v,
            Err(e) => {
                log::warn!("aborting episode at day {day}: {e}");
                return Ok(None);
            }
        };
        let series = PeriodSeries {
            values_before: &record.values_before,
            index_levels: index,
            n0,
        };
        let r = reward(&setup.error_spec, &series)?;
        let next_state = normalized_state(setup.panel, grid, day_end, normalizer)?;
        let v_t = value_net.eval_forward(state.flat())[0];
        let v_t1 = value_net.eval_forward(next_state.flat())[0];
        let truncated = day_end < day + grid.m;

        transitions.push(Transition {
            state: state.data,
            action,
            reward: r,
            v_t,
            v_t1,
            logp,
            std,
            advantage: f64::NAN,
            ret: f64::NAN,
            truncated,
        });

        portfolio = end_state;
        day = day_end;
        if day >= t_train_day {
            break;
        }
    }
    compute_gae(&mut transitions, setup.hyper.gamma, setup.hyper.lambda)?;
    Ok(Some(transitions))
}

struct WorkerHarvest {
    episodes: Vec<Vec<Transition>>,
    aborted: usize,
}

fn run_worker(
    setup: &TrainSetup,
    normalizer: &StateNormalizer,
    policy: &PolicyNets,
    value_net: &Mlp,
    t0_split: usize,
    train_days: usize,
    epoch: usize,
    worker: usize,
) -> Result<WorkerHarvest> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    rng.set_stream(1 + (epoch as u64) * setup.hyper.workers as u64 + worker as u64);
    let mut episodes = Vec::with_capacity(setup.hyper.episodes_per_epoch);
    let mut aborted = 0usize;
    for _ in 0..setup.hyper.episodes_per_epoch {
        match collect_episode(
            setup, normalizer, policy, value_net, t0_split, train_days, &mut rng,
        )? {
            Some(ep) => episodes.push(ep),
            None => aborted += 1,
        }
    }
    Ok(WorkerHarvest { episodes, aborted })
}

/// Train policy and value networks on the panel. Deterministic for a fixed
/// `(seed, workers)` pair; changing the worker count only reorders the
/// buffer.
pub fn train(setup: &TrainSetup) -> Result<(TrainedModel, Vec<EpochLog>)> {
    setup.panel.validate_complete()?;
    setup.grid.validate(setup.panel.len())?;
    setup.hyper.validate()?;
    setup.error_spec.validate()?;
    let n_stocks = setup.panel.n_stocks();
    setup.cost.validate(n_stocks)?;
    if let Some(c) = &setup.cash {
        if !(c.b_f >= 0.0) || !(c.xi_cap > 0.0 && c.xi_cap < 1.0) {
            return Err(TrackerError::Config(format!(
                "cash config needs b_f >= 0 and xi_cap in (0,1): {c:?}"
            )));
        }
    }

    let offset = setup.grid.lookback_days();
    if setup.panel.len() < offset + 2 {
        return Err(TrackerError::Config(format!(
            "panel of {} days cannot hold a {offset}-day look-back plus a training range",
            setup.panel.len()
        )));
    }
    let train_days = setup.panel.len() - 1 - offset;
    let t0_split = setup
        .hyper
        .t0_split_days
        .unwrap_or_else(|| default_t0_split(train_days));

    let normalizer = if setup.normalize {
        StateNormalizer::fit(setup.panel, 1, setup.panel.len() - 1)?
    } else {
        StateNormalizer::identity(setup.panel.state_width())
    };

    let input_dim = setup.grid.lookback_days() * setup.panel.state_width();
    let action_dim = n_stocks + usize::from(setup.cash.is_some());
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mean_spec = MlpSpec {
        input_dim,
        hidden: setup.nets.policy_hidden.clone(),
        output_dim: action_dim,
        output_activation: OutputActivation::Linear,
        batch_norm: setup.nets.batch_norm,
    };
    let std_spec = MlpSpec {
        output_activation: OutputActivation::Exp,
        ..mean_spec.clone()
    };
    let value_spec = MlpSpec {
        input_dim,
        hidden: setup.nets.value_hidden.clone(),
        output_dim: 1,
        output_activation: OutputActivation::Linear,
        batch_norm: setup.nets.batch_norm,
    };
    let (mut policy, mut value_net) = match &setup.init {
        Some((p, v)) => {
            if p.mean_net.spec.input_dim != input_dim
                || p.mean_net.spec.output_dim != action_dim
                || v.spec.input_dim != input_dim
            {
                return Err(TrackerError::Config(format!(
                    "warm-start networks expect input {} / action {}, setup needs {input_dim} / {action_dim}",
                    p.mean_net.spec.input_dim, p.mean_net.spec.output_dim
                )));
            }
            (p.clone(), v.clone())
        }
        None => (
            PolicyNets {
                mean_net: Mlp::new(mean_spec, &mut rng)?,
                std_net: Mlp::new(std_spec, &mut rng)?,
                b: 1.0,
            },
            Mlp::new(value_spec, &mut rng)?,
        ),
    };

    let mut adam_mean = Adam::new(policy.mean_net.n_params());
    let mut adam_std = Adam::new(policy.std_net.n_params());
    let mut adam_value = Adam::new(value_net.n_params());

    let mut logs = Vec::with_capacity(setup.hyper.epochs);
    for epoch in 0..setup.hyper.epochs {
        // Rollout phase on an immutable snapshot of the parameters.
        let harvests: Vec<WorkerHarvest> = if setup.hyper.workers == 1 {
            vec![run_worker(
                setup, &normalizer, &policy, &value_net, t0_split, train_days, epoch, 0,
            )?]
        } else {
            let policy_ref = &policy;
            let value_ref = &value_net;
            let normalizer_ref = &normalizer;
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..setup.hyper.workers)
                    .map(|worker| {
                        scope.spawn(move || {
                            run_worker(
                                setup,
                                normalizer_ref,
                                policy_ref,
                                value_ref,
                                t0_split,
                                train_days,
                                epoch,
                                worker,
                            )
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("rollout worker panicked"))
                    .collect::<Result<Vec<_>>>()
            })?
        };

        let mut buffer: Vec<Transition> = Vec::new();
        let mut aborted = 0usize;
        let mut episode_rewards: Vec<f64> = Vec::new();
        for harvest in harvests {
            aborted += harvest.aborted;
            for ep in harvest.episodes {
                episode_rewards.push(ep.iter().map(|t| t.reward).sum());
                buffer.extend(ep);
            }
        }
        let mean_cum_reward = if episode_rewards.is_empty() {
            f64::NAN
        } else {
            episode_rewards.iter().sum::<f64>() / episode_rewards.len() as f64
        };

        if setup.hyper.normalize_advantages && buffer.len() > 1 {
            let count = buffer.len() as f64;
            let mean = buffer.iter().map(|t| t.advantage).sum::<f64>() / count;
            let var = buffer
                .iter()
                .map(|t| (t.advantage - mean) * (t.advantage - mean))
                .sum::<f64>()
                / count;
            let std = var.sqrt().max(1e-8);
            for t in &mut buffer {
                t.advantage = (t.advantage - mean) / std;
            }
        }

        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(setup.seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM_BASE + epoch as u64);
        for i in (1..buffer.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            buffer.swap(i, j);
        }

        let mut sums = LossParts::default();
        let mut minibatches = 0usize;
        let mut skipped = 0usize;
        let nb = setup.hyper.minibatch;
        let mut i = 0usize;
        while i + nb <= buffer.len() {
            let refs: Vec<&Transition> = buffer[i..i + nb].iter().collect();
            let (parts, grads) = compute_ppo_losses(&policy, &value_net, &refs, &setup.hyper)?;
            adam_mean.step(&mut policy.mean_net.params, &grads.mean, setup.hyper.lr);
            adam_std.step(&mut policy.std_net.params, &grads.std, setup.hyper.lr);
            adam_value.step(&mut value_net.params, &grads.value, setup.hyper.lr);
            sums.clip += parts.clip;
            sums.value += parts.value;
            sums.entropy += parts.entropy;
            sums.total += parts.total;
            skipped += parts.skipped;
            minibatches += 1;
            i += nb;
        }

        // Fold the epoch's state distribution into the batch-norm running
        // statistics now that the update phase is over; doing it mid-epoch
        // would shift the densities the stored log-probabilities refer to.
        if !buffer.is_empty() {
            let m = buffer.len();
            let mut xs = Vec::with_capacity(m * input_dim);
            for t in &buffer {
                xs.extend_from_slice(&t.state);
            }
            let _ = policy.mean_net.frozen_forward_cached(&xs, m);
            let _ = policy.std_net.frozen_forward_cached(&xs, m);
            let _ = value_net.frozen_forward_cached(&xs, m);
        }

        let scale = if minibatches > 0 {
            1.0 / minibatches as f64
        } else {
            0.0
        };
        logs.push(EpochLog {
            epoch,
            total_loss: sums.total * scale,
            clip_loss: sums.clip * scale,
            value_loss: sums.value * scale,
            entropy_loss: sums.entropy * scale,
            mean_cum_reward,
            transitions: buffer.len(),
            minibatches,
            skipped_samples: skipped,
            aborted_episodes: aborted,
        });
    }

    Ok((
        TrainedModel {
            version: 1,
            policy,
            value_net,
            normalizer,
            grid: setup.grid,
            error_spec: setup.error_spec,
            hyper: setup.hyper,
            cash: setup.cash,
            tickers: setup.panel.tickers.clone(),
            seed: setup.seed,
            epochs_done: setup.hyper.epochs,
        },
        logs,
    ))
}
