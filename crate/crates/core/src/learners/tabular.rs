//! Tabular problems expressed with one-hot state features, so the learners'
//! own update rules can be run to convergence and compared with value
//! iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{Featurizer, StateFeatures};
use crate::models::{LinearQFunction, LinearSoftmaxPolicy, Matrix, TargetSnapshot};
use crate::oracles::{sup_diff, TabularMDP};

use super::steps::{dqn_step, vr_sequential_estep, vr_weights, DqnVariant, Sample};
use super::{Algo, LearnerState, VRConfig};

/// Every `(s, a, s')` with `P(s'|s,a) > 0` as a sample weighted by that
/// probability, so a full-batch loss is the exact expected loss.
pub fn exact_batch(mdp: &TabularMDP) -> Vec<Sample> {
    let ns = mdp.num_states;
    let mut out = Vec::new();
    for s in 0..ns {
        for a in 0..mdp.num_actions {
            for next in 0..ns {
                let p = mdp.p(s, a, next);
                if p > 0.0 {
                    let mut sample = Sample::new(
                        StateFeatures::one_hot(ns, s),
                        a.into(),
                        mdp.r(s, a),
                        Some(StateFeatures::one_hot(ns, next)),
                    );
                    sample.weight = p;
                    out.push(sample);
                }
            }
        }
    }
    out
}

/// Learner state with zero heads of shape states × actions and a target that
/// syncs after every update.
pub fn tabular_state(algo: Algo, num_states: usize, num_actions: usize) -> Result<LearnerState> {
    let q = LinearQFunction::zeros(num_states, num_actions);
    Ok(LearnerState {
        algo,
        featurizer: Featurizer::new(num_actions.max(2), 0.0)?,
        policy: LinearSoftmaxPolicy::zeros(num_states, num_actions),
        logging: LinearSoftmaxPolicy::zeros(num_states, num_actions),
        target: TargetSnapshot::new(&q, 1),
        q,
        step: 0,
    })
}

/// `Q(s, a)` for every pair, row-major.
pub fn q_table(q: &LinearQFunction) -> Vec<f64> {
    let (ns, na) = (q.weights.rows(), q.weights.cols());
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            out.push(q.weights.get(s, a) + q.offset);
        }
    }
    out
}

/// Per-state action distributions of a tabular policy.
pub fn policy_table(policy: &LinearSoftmaxPolicy) -> Result<Vec<Vec<f64>>> {
    (0..policy.dim())
        .map(|s| policy.probs(&StateFeatures::one_hot(policy.dim(), s)))
        .collect()
}

/// Policy whose per-state logits are the given table.
pub fn policy_from_logits(logits: &[Vec<f64>]) -> LinearSoftmaxPolicy {
    let rows = logits.len();
    let cols = logits.first().map_or(0, Vec::len);
    LinearSoftmaxPolicy {
        weights: Matrix::from_fn(rows, cols, |r, c| logits[r][c]),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Convergence {
    pub q: Vec<f64>,
    pub iterations: usize,
}

fn largest_stable_rate(weights: &[f64], batch: &[Sample]) -> f64 {
    // Loss curvature is at most 4 Σ_i weight_i w_i / Σ_i weight_i.
    let total: f64 = batch.iter().map(|s| s.weight).sum();
    let weighted: f64 = batch.iter().zip(weights).map(|(s, w)| s.weight * w).sum();
    0.9 * total / (2.0 * weighted)
}

fn run_to_convergence(
    state: &mut LearnerState,
    tol: f64,
    max_iters: usize,
    mut step: impl FnMut(&mut LearnerState) -> Result<()>,
) -> Result<Convergence> {
    let mut prev = q_table(&state.q);
    for it in 1..=max_iters {
        step(state)?;
        let cur = q_table(&state.q);
        if sup_diff(&prev, &cur) < tol {
            return Ok(Convergence {
                q: cur,
                iterations: it,
            });
        }
        prev = cur;
    }
    Err(Error::Numeric(format!(
        "tabular updates did not settle within {max_iters} iterations"
    )))
}

/// Full-batch DQN updates with the target synced every step.
pub fn solve_dqn(mdp: &TabularMDP, tol: f64, max_iters: usize) -> Result<Convergence> {
    let batch = exact_batch(mdp);
    let refs: Vec<&Sample> = batch.iter().collect();
    let mut state = tabular_state(Algo::Dqn, mdp.num_states, mdp.num_actions)?;
    let config = VRConfig {
        gamma: mdp.gamma,
        sync_interval: 1,
        lr_q: largest_stable_rate(&vec![1.0; batch.len()], &batch),
        ..VRConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    run_to_convergence(&mut state, tol, max_iters, |st| {
        dqn_step(st, &refs, &config, DqnVariant::Standard, 0.0, &mut rng).map(|_| ())
    })
}

/// Full-batch importance-weighted VR E-steps with `p_θ` and `p_ψ` held fixed
/// and exact bootstrap expectations.
pub fn solve_vr_estep(
    mdp: &TabularMDP,
    policy: LinearSoftmaxPolicy,
    logging: LinearSoftmaxPolicy,
    alpha: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Convergence> {
    let batch = exact_batch(mdp);
    let refs: Vec<&Sample> = batch.iter().collect();
    let mut state = tabular_state(Algo::Vr, mdp.num_states, mdp.num_actions)?;
    state.policy = policy;
    state.logging = logging;
    let mut config = VRConfig {
        alpha,
        beta: 1.0,
        gamma: mdp.gamma,
        sync_interval: 1,
        ..VRConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    run_to_convergence(&mut state, tol, max_iters, |st| {
        let w = vr_weights(st, &refs, &config, true)?;
        config.lr_q = largest_stable_rate(&w, &batch);
        vr_sequential_estep(st, &refs, &config, true, &mut rng).map(|_| ())
    })
}
