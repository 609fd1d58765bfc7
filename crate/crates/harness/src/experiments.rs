//! Train-then-measure building blocks shared by the commands and the
//! acceptance suite.

use anyhow::Result;
use vrank_core::learners::{effective_gamma, posterior_q, EpochRecord};
use vrank_core::metrics::{overestimation_bias, RankingEval, RankingReport};
use vrank_core::oracles::kl;
use vrank_core::sim::{online_rollout, RolloutReport};
use vrank_core::{train, Algo, LearnerState, LoggedDataset, SimWorld, VRConfig};

use crate::config::ExperimentConfig;
use crate::data::splits;

pub struct RunOutcome {
    pub algo: Algo,
    pub seed: u64,
    pub state: LearnerState,
    pub trace: Vec<EpochRecord>,
    pub ranking: RankingReport,
    pub bias: Option<f64>,
    pub test: LoggedDataset,
}

/// Ranking metrics on `data`, plus the overestimation bias for value-based
/// learners.
pub fn measure(
    state: &LearnerState,
    data: &LoggedDataset,
    ks: &[usize],
    learner: &VRConfig,
) -> Result<(RankingReport, Option<f64>)> {
    let eval = RankingEval {
        ks: ks.to_vec(),
        per_feedback: false,
    };
    let ranking = eval.evaluate(data, &state.featurizer, |f| state.scores(f))?;
    let bias = if state.algo.has_q() {
        Some(overestimation_bias(
            &state.q,
            data,
            &state.featurizer,
            effective_gamma(state.algo, learner),
        )?)
    } else {
        None
    };
    Ok((ranking, bias))
}

/// Trains on the seed's train split with validation metrics in the trace,
/// then measures on the test split.
pub fn train_and_test(config: &ExperimentConfig, algo: Algo, learner: &VRConfig, seed: u64) -> Result<RunOutcome> {
    let data = splits(config, seed)?;
    let out = train(algo, &data.train, Some(&data.valid), learner, config.train.epochs, seed)?;
    let (ranking, bias) = measure(&out.state, &data.test, &config.ks(), learner)?;
    Ok(RunOutcome {
        algo,
        seed,
        state: out.state,
        trace: out.trace,
        ranking,
        bias,
        test: data.test,
    })
}

/// Mean `KL(q ‖ p_ψ)` over the states of `data`, with `q ∝ p_θ exp(Q/α)`.
pub fn mean_posterior_kl(state: &LearnerState, data: &LoggedDataset, alpha: f64) -> Result<f64> {
    let mut total = 0.0;
    for t in data.transitions() {
        let f = state.featurizer.featurize(&t.state)?;
        let q = posterior_q(&state.policy, &state.q, &f, alpha)?;
        total += kl(&q, &state.logging.probs(&f)?);
    }
    Ok(total / data.num_transitions().max(1) as f64)
}

/// Online rollout of a learned state on fresh users of the seed's world.
pub fn rollout(config: &ExperimentConfig, state: &LearnerState, seed: u64) -> Result<RolloutReport> {
    let mut world = SimWorld::new(config.world_for(seed))?;
    Ok(online_rollout(&mut world, state, config.eval.online_steps, config.eval.online_k)?)
}

/// Online rollout of the configured behavior policy.
pub fn behavior_rollout(config: &ExperimentConfig, seed: u64) -> Result<RolloutReport> {
    let mut world = SimWorld::new(config.world_for(seed))?;
    Ok(online_rollout(
        &mut world,
        &config.data.behavior_policy(),
        config.eval.online_steps,
        config.eval.online_k,
    )?)
}
