use dpfl::data::{gen_population, ClientDataset, PopulationSpec};
use dpfl::federation::{evaluate, run_round, run_training, Federation, FederationConfig};
use dpfl::rng;
use dpfl::{LossKind, ModelSpec, ParameterVector};

fn config(k: usize, nu: f64, seed: u64) -> FederationConfig {
    FederationConfig {
        k,
        rounds: 200,
        users_per_round: 7,
        local_epochs: 1,
        step_size: 0.1,
        batch_size: 10,
        noise_multiplier: nu,
        patience: Some(6),
        seed,
        kmeans_max_iters: 100,
        kmeans_tol: 1e-8,
    }
}

fn populations(seed: u64) -> (Vec<ClientDataset>, Vec<ClientDataset>) {
    let spec = PopulationSpec::two_regressions(50);
    (
        gen_population(&spec, "c", &mut rng::derive(seed, &[40])).unwrap(),
        gen_population(&spec, "v", &mut rng::derive(seed, &[41])).unwrap(),
    )
}

fn linear() -> ModelSpec {
    ModelSpec::linear(2, 1, false)
}

#[test]
fn raw_training_reaches_residual_floor() {
    // u ~ U[0,1) with no intercept: irreducible RMSE is sqrt(E[u²]) = sqrt(1/3)
    let floor = (1.0f64 / 3.0).sqrt();
    let hits = (0..10)
        .filter(|&seed| {
            let (train, val) = populations(seed);
            let s = run_training(&config(2, 0.0, seed), &train, &val, &linear(), LossKind::Rmse).unwrap();
            s.best_validation_loss.unwrap() <= 2.0 * floor
        })
        .count();
    assert!(hits >= 8, "{hits}/10");
}

#[test]
fn raw_training_finds_both_generators() {
    let (train, val) = populations(3);
    let mut cfg = config(2, 0.0, 3);
    cfg.patience = None;
    let s = run_training(&cfg, &train, &val, &linear(), LossKind::Rmse).unwrap();
    let mut h: Vec<Vec<f64>> = s.hypotheses.iter().map(|h| h.as_slice().to_vec()).collect();
    h.sort_by(|a, b| a[1].total_cmp(&b[1]));
    assert!((h[0][0] - 4.0).abs() < 0.3 && (h[0][1] + 4.5).abs() < 0.3, "{h:?}");
    assert!((h[1][0] - 5.0).abs() < 0.3 && (h[1][1] - 6.0).abs() < 0.3, "{h:?}");
}

#[test]
fn noise_does_not_help() {
    let mut noisy = 0.0;
    let mut raw = 0.0;
    for seed in 0..5 {
        let (train, val) = populations(seed);
        let mut cfg = config(2, 5.0, seed);
        cfg.patience = None;
        let final_loss = |c: &FederationConfig| {
            let s = run_training(c, &train, &val, &linear(), LossKind::Rmse).unwrap();
            s.history.last().unwrap().validation_loss.unwrap()
        };
        noisy += final_loss(&cfg);
        cfg.noise_multiplier = 0.0;
        raw += final_loss(&cfg);
    }
    assert!(noisy >= raw, "nu=5 {noisy} vs nu=0 {raw}");
}

#[test]
fn hypothesis_count_survives_empty_clusters() {
    let (train, val) = populations(5);
    let mut cfg = config(6, 2.0, 5);
    cfg.rounds = 40;
    cfg.patience = None;
    let s = run_training(&cfg, &train, &val, &linear(), LossKind::Rmse).unwrap();
    let mut saw_empty = false;
    for rec in &s.history {
        assert_eq!(rec.hypotheses.len(), 6);
        assert_eq!(rec.assignment_counts.len(), 6);
        saw_empty |= rec.assignment_counts.contains(&0);
    }
    assert!(saw_empty);
}

#[test]
fn empty_cluster_keeps_its_hypothesis() {
    let (train, _) = populations(6);
    let cfg = config(3, 1.0, 6);
    let spec = linear();
    let fed = Federation::new(&cfg, &spec, LossKind::Rmse, &train).unwrap();
    let mut state = fed.initial_state();
    // a hypothesis far from every release attracts no members
    state.hypotheses[2] = ParameterVector::new(vec![1e6, 1e6]);
    run_round(&mut state, &fed, 0).unwrap();
    assert_eq!(state.history[0].assignment_counts[2], 0);
    assert_eq!(state.hypotheses[2], ParameterVector::new(vec![1e6, 1e6]));
}

#[test]
fn thread_count_does_not_change_results() {
    let (train, val) = populations(7);
    let mut cfg = config(2, 5.0, 7);
    cfg.rounds = 30;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_training(&cfg, &train, &val, &linear(), LossKind::Rmse).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn validation_scores_match_argmin_selection() {
    let (train, val) = populations(8);
    let mut cfg = config(2, 1.0, 8);
    cfg.rounds = 20;
    let s = run_training(&cfg, &train, &val, &linear(), LossKind::Rmse).unwrap();
    let e = evaluate(&s.hypotheses, &val, &linear(), LossKind::Rmse).unwrap();
    assert_eq!(Some(e.global_loss), s.history.last().unwrap().validation_loss);
    assert_eq!(e.assignments.len(), val.len());
}
