use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vrank_core::learners::tabular::tabular_state;
use vrank_core::learners::*;
use vrank_core::mdp::split_dataset;
use vrank_core::sim::generate_logged;
use vrank_core::{
    Algo, BehaviorPolicy, Checkpoint, Item, LinearSoftmaxPolicy, Matrix, SimWorld, StateFeatures, Trainer, VRConfig,
    WorldConfig,
};

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol)
}

fn features() -> StateFeatures {
    StateFeatures::from_dense(&[0.5, 0.0, 1.0])
}

#[test]
fn mle_single_step_on_two_items() {
    let mut policy = LinearSoftmaxPolicy::zeros(3, 2);
    let s = Sample::new(features(), Item(0), 0.0, None);
    let lr = 0.1;
    mle_step(&mut policy, &[&s], lr).unwrap();
    let f = features().to_dense();
    let want = Matrix::from_fn(3, 2, |r, c| lr * f[r] * if c == 0 { 0.5 } else { -0.5 });
    assert!(close(&policy.weights, &want, 1e-15));
}

#[test]
fn mstep_moves_policy_to_the_mixture() {
    let mut state = tabular_state(Algo::Vr, 1, 4).unwrap();
    state.q.weights = Matrix::from_fn(1, 4, |_, a| -(a as f64));
    state.logging.weights = Matrix::from_fn(1, 4, |_, a| 0.3 * a as f64);
    let config = VRConfig { beta: 0.4, ..VRConfig::default() };
    let f = StateFeatures::one_hot(1, 0);
    let s = Sample::new(f.clone(), Item(0), 0.0, None);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let teachers = mstep_teachers(&state, &[&s], &config, &mut rng).unwrap();
    let q = posterior_q(&state.policy, &state.q, &f, config.alpha).unwrap();
    let pb = state.logging.probs(&f).unwrap();
    for a in 0..4 {
        assert!((teachers[0][a] - (0.4 * q[a] + 0.6 * pb[a])).abs() < 1e-15);
    }
    for _ in 0..5000 {
        let (_, g) = cross_entropy_loss_grad(&state.policy, &[&s], &teachers).unwrap();
        state.policy.weights.axpy(-1.0, &g);
    }
    let p = state.policy.probs(&f).unwrap();
    let tv: f64 = p.iter().zip(&teachers[0]).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
    assert!(tv < 1e-6, "total variation {tv:e}");
}

#[test]
fn beta_zero_is_mle_toward_the_logging_estimate() {
    let mut state = tabular_state(Algo::Vr, 3, 3).unwrap();
    state.logging.weights = Matrix::from_fn(3, 3, |r, c| (r as f64) - 0.5 * c as f64);
    state.policy.weights = Matrix::from_fn(3, 3, |r, c| 0.1 * (r * c) as f64);
    let config = VRConfig { beta: 0.0, lr_policy: 0.2, ..VRConfig::default() };
    let a = Sample::new(features(), Item(1), 0.0, None);
    let mut b = Sample::new(StateFeatures::one_hot(3, 2), Item(2), 0.0, None);
    b.weight = 3.0;
    let mut by_hand = state.policy.clone();
    let mut step = Matrix::zeros(3, 3);
    for s in [&a, &b] {
        let p = state.policy.probs(&s.features).unwrap();
        let pb = state.logging.probs(&s.features).unwrap();
        let coeff: Vec<f64> = p.iter().zip(&pb).map(|(x, y)| s.weight * (x - y)).collect();
        step.add_outer(1.0, &s.features, &coeff);
    }
    by_hand.weights.axpy(-0.2 / 4.0, &step);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    vr_mstep(&mut state, &[&a, &b], &config, &mut rng).unwrap();
    assert!(close(&state.policy.weights, &by_hand.weights, 1e-14));
}

#[test]
fn unit_weights_make_vr_and_vr_nw_agree() {
    let mut state = tabular_state(Algo::Vr, 3, 3).unwrap();
    let logits = Matrix::from_fn(3, 3, |r, c| 0.2 * r as f64 - 0.1 * c as f64);
    state.policy.weights = logits.clone();
    state.logging.weights = logits;
    let config = VRConfig::default();
    let batch = [
        Sample::new(features(), Item(1), -2.0, Some(StateFeatures::one_hot(3, 0))),
        Sample::new(StateFeatures::one_hot(3, 1), Item(0), -1.0, None),
    ];
    let refs: Vec<&Sample> = batch.iter().collect();
    let w = vr_weights(&state, &refs, &config, true).unwrap();
    assert!(w.iter().all(|x| (x - 1.0).abs() < 1e-12));
    let mut weighted = state.clone();
    let mut plain = state;
    vr_sequential_estep(&mut weighted, &refs, &config, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    vr_sequential_estep(&mut plain, &refs, &config, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(close(&weighted.q.weights, &plain.q.weights, 1e-14));
    assert!((weighted.q.offset - plain.q.offset).abs() < 1e-14);
}

#[test]
fn one_step_dqn_is_reward_regression() {
    let mut state = tabular_state(Algo::DqnOne, 3, 3).unwrap();
    state.q.weights = Matrix::from_fn(3, 3, |r, c| 0.3 * r as f64 - 0.2 * c as f64);
    state.q.offset = -0.7;
    let batch = [
        Sample::new(features(), Item(2), -4.0, Some(StateFeatures::one_hot(3, 0))),
        Sample::new(StateFeatures::one_hot(3, 1), Item(0), -1.5, Some(features())),
    ];
    let refs: Vec<&Sample> = batch.iter().collect();
    let mse: f64 = batch
        .iter()
        .map(|s| (state.q.value(&s.features, s.action).unwrap() - s.reward).powi(2))
        .sum::<f64>()
        / 2.0;
    let config = VRConfig { gamma: 0.9, ..VRConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = dqn_step(&mut state, &refs, &config, DqnVariant::OneStep, 0.0, &mut rng).unwrap();
    assert!((loss - mse).abs() < 1e-12);
}

#[test]
fn matched_policies_reduce_pg_to_return_weighted_likelihood() {
    let mut state = tabular_state(Algo::Pg, 3, 3).unwrap();
    let s = Sample {
        ret: 2.5,
        ..Sample::new(features(), Item(1), -2.5, None)
    };
    let config = VRConfig { lr_policy: 0.1, ..VRConfig::default() };
    pg_step(&mut state, &[&s], &config).unwrap();
    let f = features().to_dense();
    let p = 1.0 / 3.0;
    let want = Matrix::from_fn(3, 3, |r, c| 0.1 * 2.5 * f[r] * (if c == 1 { 1.0 } else { 0.0 } - p));
    assert!(close(&state.policy.weights, &want, 1e-14));
}

fn small_split(seed: u64) -> (vrank_core::LoggedDataset, vrank_core::LoggedDataset) {
    let mut world = SimWorld::new(WorldConfig { catalog_size: 20, num_categories: 5, seed, ..WorldConfig::default() }).unwrap();
    let data = generate_logged(&mut world, &BehaviorPolicy::random(), 300, 20, Default::default()).unwrap();
    let (train, _, test) = split_dataset(&data, (0.8, 0.1, 0.1), seed).unwrap();
    (train, test)
}

#[test]
fn training_is_deterministic_per_seed() {
    let (train_set, test) = small_split(3);
    let config = VRConfig::default();
    for algo in [Algo::Vr, Algo::Pg, Algo::DqnNs] {
        let a = train(algo, &train_set, Some(&test), &config, 2, 7).unwrap();
        let b = train(algo, &train_set, Some(&test), &config, 2, 7).unwrap();
        assert_eq!(serde_json::to_string(&a.trace).unwrap(), serde_json::to_string(&b.trace).unwrap());
        assert_eq!(a.state, b.state);
        let c = train(algo, &train_set, Some(&test), &config, 2, 8).unwrap();
        assert_ne!(a.state, c.state);
    }
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (train_set, test) = small_split(4);
    let config = VRConfig::default();
    let full = train(Algo::Vr, &train_set, Some(&test), &config, 3, 5).unwrap();

    let mut first = Trainer::new(Algo::Vr, &train_set, Some(&test), &config, 5).unwrap();
    let mut trace = first.run(1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    Checkpoint::new(first.into_state(), 1, 5, config.clone()).save(&path).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    let mut resumed = Trainer::resume(ckpt.state, ckpt.epochs_done, &train_set, Some(&test), &ckpt.config, ckpt.seed).unwrap();
    trace.extend(resumed.run(3).unwrap());
    assert_eq!(resumed.state(), &full.state);
    assert_eq!(trace, full.trace);
}

#[test]
fn vr_trace_reports_q_loss_and_bias() {
    let (train_set, test) = small_split(5);
    let out = train(Algo::Vr, &train_set, Some(&test), &VRConfig::default(), 1, 1).unwrap();
    let rec = &out.trace[0];
    assert!(rec.loss_q.is_some() && rec.bias.is_some() && rec.loss_logging.is_some());
    let mle = train(Algo::Mle, &train_set, Some(&test), &VRConfig::default(), 2, 1).unwrap();
    assert_eq!(mle.trace.len(), 2);
    assert!(mle.trace[0].bias.is_none());
}
