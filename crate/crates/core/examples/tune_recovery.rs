// Scratch diagnostic for the synthetic-recovery experiment (not shipped).
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracker_core::backtest::{evaluate_with, threshold_weights, EvalSettings};
use tracker_core::cost::CostModel;
use tracker_core::market::{build_state_at_day, synth_panel, SynthSpec, TimeGrid};
use tracker_core::metrics::ErrorSpec;
use tracker_core::rebalance::SolverOptions;
use tracker_core::rl::policy::action_to_weights;
use tracker_core::rl::ppo::PpoHyper;
use tracker_core::rl::train::{train, NetConfig, TrainSetup};

const W: [f64; 5] = [0.35, 0.25, 0.20, 0.12, 0.08];

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let k: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2024);

    let spec = SynthSpec {
        index_weights: W.to_vec(),
        drift: 0.0002,
        vol: 0.01,
        p0: 100.0,
        index0: 1000.0,
        tbill: 0.0001,
        with_vix: true,
    };
    let panel = synth_panel(606, 5, 5 + 2000 + 60 + 1, &spec).unwrap();
    let n_ep: usize = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(4);
    let grid = TimeGrid { m: 5, n_s: 1, n: n_ep, n_b: 1 };
    let train_end = 5 + 2000;
    let test_end = panel.len() - 1;
    let train_panel = panel.slice(0, train_end, &[0, 1, 2, 3, 4]);

    // Train in chunks so we can watch the trajectory of the weights.
    let chunk = 100.min(epochs);
    let mut done = 0usize;
    let mut init = None;
    let mut final_model = None;
    while done < epochs {
        let hyper = PpoHyper {
            lr,
            epochs: chunk.min(epochs - done),
            episodes_per_epoch: k,
            workers: 4,
            minibatch: 64,
            ..PpoHyper::default()
        };
        let setup = TrainSetup {
            panel: &train_panel,
            grid,
            error_spec: ErrorSpec::return_based(),
            hyper,
            nets: NetConfig { policy_hidden: vec![16, 16], value_hidden: vec![16, 16], batch_norm: true },
            cost: CostModel::zero(5),
            cash: None,
            solver: SolverOptions::default(),
            v0: 1e6,
            seed: seed + done as u64,
            normalize: true,
            init,
        };
        let (model, logs) = train(&setup).unwrap();
        done += logs.len();
        let mut state = build_state_at_day(&panel, &grid, train_end).unwrap();
        model.normalizer.apply(&mut state);
        let action = model.policy.deterministic_action(state.flat());
        let (mu, sigma) = model.policy.mu_sigma(state.flat());
        let w = action_to_weights(&action[..5]);
        let l1: f64 = w.iter().zip(W.iter()).map(|(a, b)| (a - b).abs()).sum();
        let last = logs.last().unwrap();
        println!(
            "epoch {done:4}  reward {:8.3}  loss {:9.3}  L1 {l1:.3}  w {:?}  mu {:?} sigma_mean {:.3}",
            last.mean_cum_reward,
            last.total_loss,
            w.iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            mu.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
            sigma.iter().sum::<f64>() / 5.0
        );
        init = Some((model.policy.clone(), model.value_net.clone()));
        final_model = Some(model);
    }

    let model = final_model.unwrap();
    let settings = EvalSettings {
        cost: CostModel::zero(5),
        solver: SolverOptions::default(),
        v0: 1e6,
        q: 2.0,
        xi_cap: 0.2,
        m: 5,
        n_b: 1,
    };
    let mut decide_model = |day: usize| {
        let mut state = build_state_at_day(&panel, &model.grid, day).unwrap();
        model.normalizer.apply(&mut state);
        let action = model.policy.deterministic_action(state.flat());
        Ok((threshold_weights(&action_to_weights(&action[..5]), 1e-9).unwrap(), None))
    };
    let (m_model, _) = evaluate_with(&panel, &settings, train_end, test_end, &mut decide_model).unwrap();
    let mut decide_u = |_d: usize| Ok((vec![0.2; 5], None));
    let (m_u, _) = evaluate_with(&panel, &settings, train_end, test_end, &mut decide_u).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC06);
    let mut decide_r = |_d: usize| {
        let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Ok((action_to_weights(&a), None))
    };
    let (m_r, _) = evaluate_with(&panel, &settings, train_end, test_end, &mut decide_r).unwrap();
    println!(
        "out-of-sample R-TE: model {:.3e}  uniform {:.3e}  random {:.3e}  (need <= 0.5x both)",
        m_model.r_te, m_u.r_te, m_r.r_te
    );
}
