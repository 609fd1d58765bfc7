//! Oracle suite: learner-side computations checked against independent
//! brute-force references on small random problems.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vrank_core::learners::tabular::{policy_from_logits, policy_table, solve_dqn, solve_vr_estep, tabular_state};
use vrank_core::learners::{
    cross_entropy_loss, cross_entropy_loss_grad, mle_loss, mle_loss_grad, mstep_teachers, pg_coefficients, pg_loss,
    pg_loss_grad, posterior_q, td_loss, td_loss_grad, vr_mstep, vr_weights, Sample,
};
use vrank_core::oracles::{
    elbo, exact_posterior, hard_value_iteration, overestimation_lemma_check, random_distribution,
    soft_value_iteration, sup_diff, variance_bound_check, TabularMDP, VI_TOL,
};
use vrank_core::{
    Algo, Featurizer, Item, LearnerState, LinearQFunction, LinearSoftmaxPolicy, Matrix, SessionState, StateFeatures,
    VRConfig,
};

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} [{}] {}: {} ({:.2}s)", self.id, self.name, self.detail, self.seconds)
    }
}

fn outcome(id: &'static str, name: &'static str, start: Instant, limit: Duration, ok: bool, detail: String) -> CheckOutcome {
    let elapsed = start.elapsed();
    let in_time = elapsed < limit;
    CheckOutcome {
        id,
        name,
        passed: ok && in_time,
        detail: if in_time {
            detail
        } else {
            format!("{detail}; over time limit {}s", limit.as_secs())
        },
        seconds: elapsed.as_secs_f64(),
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Learner state over a random catalog of `2..=max_n` items with random heads.
fn random_state(rng: &mut ChaCha8Rng, max_n: usize) -> LearnerState {
    let n = rng.gen_range(2..=max_n);
    let fz = Featurizer::new(n, 0.8).expect("valid featurizer");
    let d = fz.dim();
    let mut st = LearnerState::init(Algo::Vr, fz, &VRConfig::default(), rng.gen());
    st.policy.weights = random_matrix(rng, d, n, 2.0);
    st.logging.weights = random_matrix(rng, d, n, 2.0);
    st.q.weights = random_matrix(rng, d, n, 3.0);
    st.q.offset = rng.gen_range(-5.0..0.0);
    st
}

fn random_features(rng: &mut ChaCha8Rng, fz: &Featurizer) -> StateFeatures {
    let len = rng.gen_range(0..8);
    let history = (0..len).map(|_| Item::from(rng.gen_range(0..fz.catalog_size))).collect();
    fz.featurize(&SessionState::new(history)).expect("in-catalog history")
}

fn random_batch(rng: &mut ChaCha8Rng, st: &LearnerState) -> Vec<Sample> {
    (0..rng.gen_range(1..6))
        .map(|_| {
            let f = random_features(rng, &st.featurizer);
            let next = rng.gen_bool(0.7).then(|| random_features(rng, &st.featurizer));
            let mut s = Sample::new(f, Item::from(rng.gen_range(0..st.catalog_size())), -rng.gen_range(0.0..5.0), next);
            s.ret = rng.gen_range(0.0..10.0);
            s.weight = rng.gen_range(0.2..2.0);
            s
        })
        .collect()
}

/// `posterior_q` against the direct-summation reference.
pub fn check_posterior(instances: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.gen_range(2..=50);
        let d = rng.gen_range(1..=8);
        let policy = LinearSoftmaxPolicy {
            weights: random_matrix(&mut rng, d, n, 2.0),
        };
        let q = LinearQFunction {
            weights: random_matrix(&mut rng, d, n, 5.0),
            offset: rng.gen_range(-10.0..0.0),
        };
        let f = StateFeatures::from_dense(&(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let alpha = rng.gen_range(0.1..5.0);
        let got = posterior_q(&policy, &q, &f, alpha).expect("posterior");
        let want = exact_posterior(&policy.probs(&f).expect("probs"), &q.values(&f).expect("values"), alpha)
            .expect("reference posterior");
        worst = worst.max(sup_diff(&got, &want));
    }
    outcome(
        "1",
        "posterior matches exact reference",
        start,
        Duration::from_secs(5),
        worst < 1e-10,
        format!("{instances} instances, max abs diff {worst:.2e}"),
    )
}

const FD_STEP: f64 = 1e-5;

fn central_differences(params: &[f64], loss: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let x = p[i];
            p[i] = x + FD_STEP;
            let up = loss(&p);
            p[i] = x - FD_STEP;
            let down = loss(&p);
            p[i] = x;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn reshape(p: &[f64], rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |r, c| p[r * cols + c])
}

fn policy_head(p: &[f64], like: &LinearSoftmaxPolicy) -> LinearSoftmaxPolicy {
    LinearSoftmaxPolicy {
        weights: reshape(p, like.dim(), like.catalog_size()),
    }
}

fn q_head(p: &[f64], like: &LinearQFunction) -> LinearQFunction {
    let (d, n) = (like.weights.rows(), like.weights.cols());
    LinearQFunction {
        weights: reshape(p, d, n),
        offset: p[d * n],
    }
}

fn q_params(q: &LinearQFunction) -> Vec<f64> {
    let mut p = q.weights.as_slice().to_vec();
    p.push(q.offset);
    p
}

/// Worst relative finite-difference error of one loss over `instances`
/// random learner states and batches.
fn gradient_error(loss: &str, instances: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let st = random_state(rng, 6);
        let batch = random_batch(rng, &st);
        let refs: Vec<&Sample> = batch.iter().collect();
        let config = VRConfig {
            beta: rng.gen_range(0.0..1.0),
            alpha: rng.gen_range(0.2..3.0),
            ..VRConfig::default()
        };
        let err = match loss {
            "mle" => {
                let (_, g) = mle_loss_grad(&st.policy, &refs).unwrap();
                let num = central_differences(st.policy.weights.as_slice(), |p| {
                    mle_loss(&policy_head(p, &st.policy), &refs).unwrap()
                });
                relative_error(g.as_slice(), &num)
            }
            "pg" => {
                let coeffs = pg_coefficients(&st, &refs, &config).unwrap();
                let (_, g) = pg_loss_grad(&st.policy, &refs, &coeffs).unwrap();
                let num = central_differences(st.policy.weights.as_slice(), |p| {
                    pg_loss(&policy_head(p, &st.policy), &refs, &coeffs).unwrap()
                });
                relative_error(g.as_slice(), &num)
            }
            "mstep" => {
                let teachers = mstep_teachers(&st, &refs, &config, rng).unwrap();
                let (_, g) = cross_entropy_loss_grad(&st.policy, &refs, &teachers).unwrap();
                let num = central_differences(st.policy.weights.as_slice(), |p| {
                    cross_entropy_loss(&policy_head(p, &st.policy), &refs, &teachers).unwrap()
                });
                relative_error(g.as_slice(), &num)
            }
            "td" | "weighted_td" => {
                let targets: Vec<f64> = refs.iter().map(|_| rng.gen_range(-10.0..0.0)).collect();
                let weights = vr_weights(&st, &refs, &config, loss == "weighted_td").unwrap();
                let (_, g) = td_loss_grad(&st.q, &refs, &targets, &weights).unwrap();
                let mut analytic = g.weights.as_slice().to_vec();
                analytic.push(g.offset);
                let num = central_differences(&q_params(&st.q), |p| {
                    td_loss(&q_head(p, &st.q), &refs, &targets, &weights).unwrap()
                });
                relative_error(&analytic, &num)
            }
            other => unreachable!("unknown loss {other}"),
        };
        worst = worst.max(err);
    }
    worst
}

pub const GRADIENT_LOSSES: [&str; 5] = ["mle", "td", "weighted_td", "pg", "mstep"];

/// Every loss gradient against central finite differences.
pub fn check_gradients(instances: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let errors: Vec<(&str, f64)> = GRADIENT_LOSSES
        .iter()
        .map(|&l| (l, gradient_error(l, instances, &mut rng)))
        .collect();
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errors
        .iter()
        .map(|(l, e)| format!("{l} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        "2",
        "loss gradients match finite differences",
        start,
        Duration::from_secs(30),
        worst < 1e-5,
        format!("{instances} instances each; worst rel. err: {detail}"),
    )
}

/// Exact-update DQN against hard value iteration and the exact VR E-step
/// (β = 1) against soft value iteration.
pub fn check_tabular(problems: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_hard: f64 = 0.0;
    let mut worst_soft: f64 = 0.0;
    let mut failure = None;
    for _ in 0..problems {
        let (s, a) = (rng.gen_range(1..=8), rng.gen_range(2..=4));
        let gamma = rng.gen_range(0.0..0.8);
        let alpha = rng.gen_range(1.0..3.0);
        let mdp = TabularMDP::random(&mut rng, s, a, gamma);
        let logits = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..s).map(|_| (0..a).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
        };
        let policy = policy_from_logits(&logits(&mut rng));
        let logging = policy_from_logits(&logits(&mut rng));
        let run = || -> vrank_core::Result<(f64, f64)> {
            let hard = sup_diff(&hard_value_iteration(&mdp, VI_TOL)?, &solve_dqn(&mdp, 1e-12, 200_000)?.q);
            let prior = policy_table(&policy)?;
            let soft_ref = soft_value_iteration(&mdp, &prior, alpha, VI_TOL)?;
            let soft = sup_diff(&soft_ref, &solve_vr_estep(&mdp, policy.clone(), logging.clone(), alpha, 1e-12, 200_000)?.q);
            Ok((hard, soft))
        };
        match run() {
            Ok((h, so)) => {
                worst_hard = worst_hard.max(h);
                worst_soft = worst_soft.max(so);
            }
            Err(e) => failure = Some(e.to_string()),
        }
    }
    let ok = failure.is_none() && worst_hard < 1e-6 && worst_soft < 1e-6;
    outcome(
        "3",
        "tabular updates reach value iteration",
        start,
        Duration::from_secs(60),
        ok,
        match failure {
            Some(e) => format!("error: {e}"),
            None => format!("{problems} MDPs, sup-norm hard {worst_hard:.1e}, soft {worst_soft:.1e}"),
        },
    )
}

/// The softmax-reweighted estimation error never exceeds the largest error.
pub fn check_overestimation(draws: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..draws {
        let n = rng.gen_range(1..=20);
        let prior = random_distribution(&mut rng, n);
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let errors: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let alpha = 10f64.powf(rng.gen_range(-2.0..2.0));
        let (weighted, max) = overestimation_lemma_check(&prior, &errors, alpha).expect("valid draw");
        worst_gap = worst_gap.max(weighted - max);
    }
    outcome(
        "4",
        "reweighted bias bounded by max error",
        start,
        Duration::from_secs(60),
        worst_gap <= 1e-12,
        format!("{draws} draws, max(weighted - max eps) = {worst_gap:.2e}"),
    )
}

/// Variance of `w·L` under the logging distribution against the Rényi bound.
pub fn check_variance_bound(draws: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_slack = f64::INFINITY;
    for _ in 0..draws {
        let n = rng.gen_range(1..=20);
        let q = random_distribution(&mut rng, n);
        let p = random_distribution(&mut rng, n);
        let losses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let check = variance_bound_check(&q, &p, &losses, 1.0).expect("valid draw");
        worst_slack = worst_slack.min(check.bound - check.empirical_variance);
    }
    outcome(
        "5a",
        "IS variance within Renyi bound",
        start,
        Duration::from_secs(60),
        worst_slack >= -1e-9,
        format!("{draws} draws, min(bound - variance) = {worst_slack:.2e}"),
    )
}

/// Exact EM on single-state bandits: ELBO never decreases across E- and
/// M-half-steps.
pub fn check_em(problems: usize, iterations: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_drop: f64 = 0.0;
    for _ in 0..problems {
        let n = rng.gen_range(2..=10);
        let alpha = rng.gen_range(0.3..3.0);
        let rewards: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0..5.0)).collect();
        let mut st = tabular_state(Algo::Vr, 1, n).expect("bandit state");
        st.policy.weights = random_matrix(&mut rng, 1, n, 2.0);
        st.q = LinearQFunction {
            weights: Matrix::from_fn(1, n, |_, a| rewards[a]),
            offset: 0.0,
        };
        let config = VRConfig {
            alpha,
            beta: 1.0,
            lr_policy: 0.5,
            ..VRConfig::default()
        };
        let f = StateFeatures::one_hot(1, 0);
        let sample = Sample::new(f.clone(), Item(0), 0.0, None);
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..iterations {
            let q = posterior_q(&st.policy, &st.q, &f, alpha).unwrap();
            let after_e = elbo(&st.policy.probs(&f).unwrap(), &q, &rewards, alpha).unwrap().value;
            vr_mstep(&mut st, &[&sample], &config, &mut rng).unwrap();
            let after_m = elbo(&st.policy.probs(&f).unwrap(), &q, &rewards, alpha).unwrap().value;
            worst_drop = worst_drop.max(prev - after_e).max(after_e - after_m);
            prev = after_m;
        }
    }
    outcome(
        "6",
        "exact EM keeps the ELBO non-decreasing",
        start,
        Duration::from_secs(60),
        worst_drop <= 1e-9,
        format!("{problems} bandits x {iterations} iterations, largest drop {worst_drop:.2e}"),
    )
}

/// The full suite at its standard sizes.
pub fn oracle_suite(seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_posterior(1000, seed),
        check_gradients(100, seed),
        check_tabular(20, seed),
        check_overestimation(10_000, seed),
        check_variance_bound(1000, seed),
        check_em(20, 100, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        for c in [
            check_posterior(50, 3),
            check_gradients(10, 3),
            check_tabular(3, 3),
            check_overestimation(200, 3),
            check_variance_bound(200, 3),
            check_em(3, 20, 3),
        ] {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn relative_error_uses_norms() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[1.0, 0.1]) - 0.1 / 1.01f64.sqrt()).abs() < 1e-12);
    }
}
