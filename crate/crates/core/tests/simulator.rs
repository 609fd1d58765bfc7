use vrank_core::log::{read_session_log, write_session_log};
use vrank_core::sim::{generate_logged, online_rollout};
use vrank_core::{BehaviorPolicy, Item, RewardSpec, SessionState, SimWorld, WorldConfig};

/// All categories equally likely to be liked, so no item is favoured a priori.
fn symmetric(seed: u64) -> WorldConfig {
    WorldConfig {
        liked_fraction: 0.5,
        category_skew: 0.0,
        interest_floor: 0.0,
        seed,
        ..WorldConfig::default()
    }
}

#[test]
fn random_logging_covers_items_uniformly() {
    let mut world = SimWorld::new(symmetric(21)).unwrap();
    let data = generate_logged(&mut world, &BehaviorPolicy::random(), 3000, 20, RewardSpec::default()).unwrap();
    let n = data.catalog_size();
    let mut counts = vec![0f64; n];
    for t in data.transitions() {
        counts[t.action.index()] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let expected = total / n as f64;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let df = (n - 1) as f64;
    assert!((chi2 - df).abs() < 3.0 * (2.0 * df).sqrt(), "chi-square {chi2} with {df} dof");
}

#[test]
fn sure_clicks_give_full_ctr() {
    let mut world = SimWorld::new(WorldConfig {
        liked_fraction: 1.0,
        interest_floor: 1.0,
        click_base: 10.0,
        ..WorldConfig::default()
    })
    .unwrap();
    let rep = online_rollout(&mut world, &BehaviorPolicy::random(), 5000, 5).unwrap();
    assert!(rep.ctr >= 0.999, "ctr {}", rep.ctr);
}

#[test]
fn random_rollout_covers_the_catalog() {
    let mut world = SimWorld::new(WorldConfig::default()).unwrap();
    let rep = online_rollout(&mut world, &BehaviorPolicy::random(), 5000, 5).unwrap();
    assert_eq!(rep.coverage, 100.0);
}

#[test]
fn greedy_logging_shows_only_the_best_item() {
    let mut world = SimWorld::new(WorldConfig { interest_drift: 0.0, seed: 3, ..WorldConfig::default() }).unwrap();
    let spec = world.config().reward_spec;
    let behavior = BehaviorPolicy::maximum_reward(1);
    for session in 0..50 {
        world.begin_session(session);
        let best = (0..world.catalog_size())
            .map(|i| world.expected_reward(Item::from(i), &spec))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc })
            .0;
        for _ in 0..5 {
            let list = vrank_core::sim::Recommender::recommend(&behavior, &mut world, &SessionState::empty(), 1).unwrap();
            assert_eq!(list, vec![best]);
            world.step(Item::from(best)).unwrap();
        }
    }
}

#[test]
fn same_seed_same_data_and_logs_round_trip() {
    let gen = |seed| {
        let mut world = SimWorld::new(WorldConfig { seed, ..WorldConfig::default() }).unwrap();
        generate_logged(&mut world, &BehaviorPolicy::random(), 200, 20, RewardSpec::multi_objective()).unwrap()
    };
    let a = gen(9);
    assert_eq!(a, gen(9));
    assert_ne!(a, gen(10));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    write_session_log(&path, &a).unwrap();
    let back = read_session_log(&path, a.catalog_size(), *a.reward_spec()).unwrap();
    assert_eq!(back, a);
}
