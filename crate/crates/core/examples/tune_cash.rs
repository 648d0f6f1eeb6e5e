// Scratch diagnostic for the cash-rule experiment (not shipped).
use tracker_core::backtest::{evaluate_with, threshold_weights, EvalSettings};
use tracker_core::cost::CostModel;
use tracker_core::market::{build_state_at_day, synth_panel, SynthSpec, TimeGrid};
use tracker_core::metrics::ErrorSpec;
use tracker_core::rebalance::SolverOptions;
use tracker_core::rl::policy::{action_to_f, action_to_weights};
use tracker_core::rl::ppo::PpoHyper;
use tracker_core::rl::train::{train, CashConfig, NetConfig, TrainSetup};

const W: [f64; 5] = [0.35, 0.25, 0.20, 0.12, 0.08];

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let beta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.001);
    let spec = SynthSpec {
        index_weights: W.to_vec(),
        drift: 0.0002,
        vol: 0.01,
        p0: 100.0,
        index0: 1000.0,
        tbill: 0.0001,
        with_vix: true,
    };
    let panel = synth_panel(707, 5, 5 + 800 + 126 + 1, &spec).unwrap();
    let grid = TimeGrid { m: 5, n_s: 1, n: 1, n_b: 1 };
    let train_end = 5 + 800;
    let test_end = panel.len() - 1;
    let train_panel = panel.slice(0, train_end, &[0, 1, 2, 3, 4]);
    let cash = CashConfig { b_f: 0.5, xi_cap: 0.2 };
    let mut espec = ErrorSpec::value_based();
    espec.beta = beta;
    let setup = TrainSetup {
        panel: &train_panel,
        grid,
        error_spec: espec,
        hyper: PpoHyper { lr: 5e-4, epochs, episodes_per_epoch: 32, workers: 4, minibatch: 64, ..PpoHyper::default() },
        nets: NetConfig { policy_hidden: vec![16, 16], value_hidden: vec![16, 16], batch_norm: true },
        cost: CostModel::zero(5),
        cash: Some(cash),
        solver: SolverOptions::default(),
        v0: 1e6,
        seed: 2025,
        normalize: true,
        init: None,
    };
    let (model, logs) = train(&setup).unwrap();
    println!("last reward {:.4}", logs.last().unwrap().mean_cum_reward);

    let settings = EvalSettings {
        cost: CostModel::zero(5),
        solver: SolverOptions::default(),
        v0: 1e6,
        q: 2.0,
        xi_cap: 0.2,
        m: 5,
        n_b: 1,
    };
    // Probe f and weights over a few test decision days.
    for day in [train_end, train_end + 30, train_end + 60, train_end + 90] {
        let mut state = build_state_at_day(&panel, &grid, day).unwrap();
        model.normalizer.apply(&mut state);
        let a = model.policy.deterministic_action(state.flat());
        let w = action_to_weights(&a[..5]);
        let f = action_to_f(a[5], 1.0, cash.b_f);
        let l1: f64 = w.iter().zip(W.iter()).map(|(x, y)| (x - y).abs()).sum();
        println!("day {day}: f {f:.3}  L1 {l1:.3}");
    }
    let decide = |day: usize, with_cash: bool| {
        let mut state = build_state_at_day(&panel, &grid, day).unwrap();
        model.normalizer.apply(&mut state);
        let a = model.policy.deterministic_action(state.flat());
        let w = threshold_weights(&action_to_weights(&a[..5]), 1e-9).unwrap();
        let f = with_cash.then(|| action_to_f(a[5], 1.0, cash.b_f));
        Ok((w, f))
    };
    let mut dc = |d: usize| decide(d, true);
    let (mc, _) = evaluate_with(&panel, &settings, train_end, test_end, &mut dc).unwrap();
    let mut dz = |d: usize| decide(d, false);
    let (mz, _) = evaluate_with(&panel, &settings, train_end, test_end, &mut dz).unwrap();
    println!("V-TE with cash {:.3}  without {:.3}  ratio {:.2}", mc.v_te, mz.v_te, mz.v_te / mc.v_te);
}
