use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::mdp::{apply_reward_spec, returns_to_go, LoggedDataset, RewardSpec};
use crate::metrics::{overestimation_bias, RankingEval};

use super::steps::*;
use super::{Algo, LearnerState, VRConfig, EPOCH_STREAM_BASE, PRETRAIN_STREAM};

/// Logged tuples with features computed once, grouped by session.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub samples: Vec<Sample>,
    pub episodes: Vec<Range<usize>>,
}

impl PreparedData {
    /// `gamma` only affects the policy-gradient returns stored on each sample.
    pub fn new(data: &LoggedDataset, featurizer: &Featurizer, gamma: f64) -> Result<Self> {
        let shift = data.reward_spec().shift;
        let mut samples = Vec::with_capacity(data.num_transitions());
        let mut episodes = Vec::with_capacity(data.num_sessions());
        for traj in data.trajectories() {
            let start = samples.len();
            let raw: Vec<f64> = traj.rewards().map(|r| r + shift).collect();
            let rets = returns_to_go(&raw, gamma);
            for (t, ret) in traj.transitions().iter().zip(rets) {
                let next = if t.terminal {
                    None
                } else {
                    Some(featurizer.featurize(&t.next_state)?)
                };
                samples.push(Sample {
                    features: featurizer.featurize(&t.state)?,
                    action: t.action,
                    reward: t.reward,
                    next,
                    ret,
                    weight: 1.0,
                });
            }
            episodes.push(start..samples.len());
        }
        Ok(PreparedData { samples, episodes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One line of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub algo: Algo,
    pub seed: u64,
    pub loss_policy: Option<f64>,
    pub loss_q: Option<f64>,
    pub loss_logging: Option<f64>,
    #[serde(rename = "hr@5")]
    pub hr5: f64,
    #[serde(rename = "hr@20")]
    pub hr20: f64,
    #[serde(rename = "ndcg@5")]
    pub ndcg5: f64,
    #[serde(rename = "ndcg@20")]
    pub ndcg20: f64,
    pub bias: Option<f64>,
}

/// Discount actually used by the algorithm's value regression.
pub fn effective_gamma(algo: Algo, config: &VRConfig) -> f64 {
    match algo {
        Algo::DqnOne | Algo::VrBandit => 0.0,
        _ => config.gamma,
    }
}

pub struct Trainer {
    algo: Algo,
    config: VRConfig,
    seed: u64,
    shift: f64,
    state: LearnerState,
    train: PreparedData,
    eval: LoggedDataset,
    epochs_done: usize,
}

impl Trainer {
    /// Builds a fresh learner; fits the logging-policy estimate first when the
    /// algorithm needs one. Without `eval`, metrics are taken on `data`.
    pub fn new(
        algo: Algo,
        data: &LoggedDataset,
        eval: Option<&LoggedDataset>,
        config: &VRConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let featurizer = Featurizer::new(data.catalog_size(), config.decay)?;
        let state = LearnerState::init(algo, featurizer, config, seed);
        let mut trainer = Self::assemble(algo, data, eval, config, seed, state, 0)?;
        if algo.needs_logging_estimate() {
            trainer.pretrain_logging()?;
        }
        Ok(trainer)
    }

    /// Continues from a saved state after `epochs_done` epochs.
    pub fn resume(
        state: LearnerState,
        epochs_done: usize,
        data: &LoggedDataset,
        eval: Option<&LoggedDataset>,
        config: &VRConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        Self::assemble(state.algo, data, eval, config, seed, state, epochs_done)
    }

    fn assemble(
        algo: Algo,
        data: &LoggedDataset,
        eval: Option<&LoggedDataset>,
        config: &VRConfig,
        seed: u64,
        state: LearnerState,
        epochs_done: usize,
    ) -> Result<Self> {
        data.validate()?;
        let remap = |d: &LoggedDataset| -> Result<LoggedDataset> {
            if algo == Algo::VrV {
                apply_reward_spec(d, RewardSpec::uniform())
            } else {
                Ok(d.clone())
            }
        };
        let train_data = remap(data)?;
        let eval_data = remap(eval.unwrap_or(data))?;
        let train = PreparedData::new(&train_data, &state.featurizer, config.gamma)?;
        Ok(Trainer {
            algo,
            config: config.clone(),
            seed,
            shift: train_data.reward_spec().shift,
            state,
            train,
            eval: eval_data,
            epochs_done,
        })
    }

    pub fn algo(&self) -> Algo {
        self.algo
    }

    pub fn state(&self) -> &LearnerState {
        &self.state
    }

    pub fn into_state(self) -> LearnerState {
        self.state
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    fn pretrain_logging(&mut self) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(PRETRAIN_STREAM);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut last = 0.0;
        for _ in 0..self.config.pretrain_epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &self.train.samples[i]).collect();
                total += mle_step(&mut self.state.logging, &batch, self.config.lr_logging)?;
                batches += 1;
            }
            last = total / batches.max(1) as f64;
        }
        Ok(last)
    }

    fn batches(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        if self.algo == Algo::Pg {
            let mut eps: Vec<usize> = (0..self.train.episodes.len()).collect();
            eps.shuffle(rng);
            let mut out = Vec::new();
            let mut cur = Vec::new();
            for e in eps {
                cur.extend(self.train.episodes[e].clone());
                if cur.len() >= self.config.batch_size {
                    out.push(std::mem::take(&mut cur));
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
            out
        } else {
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            order.shuffle(rng);
            order
                .chunks(self.config.batch_size)
                .map(<[usize]>::to_vec)
                .collect()
        }
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(EPOCH_STREAM_BASE + self.epochs_done as u64);
        let batches = self.batches(&mut rng);
        let cfg = self.config.clone();
        let mut policy_loss = 0.0;
        let mut q_loss = 0.0;
        for idx in &batches {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &self.train.samples[i]).collect();
            let st = &mut self.state;
            match self.algo {
                Algo::Mle => policy_loss += mle_step(&mut st.policy, &batch, cfg.lr_policy)?,
                Algo::Dqn => {
                    q_loss += dqn_step(st, &batch, &cfg, DqnVariant::Standard, self.shift, &mut rng)?
                }
                Algo::DqnOne => {
                    q_loss += dqn_step(st, &batch, &cfg, DqnVariant::OneStep, self.shift, &mut rng)?
                }
                Algo::DqnNs => {
                    q_loss += dqn_step(
                        st,
                        &batch,
                        &cfg,
                        DqnVariant::NegativeSampling,
                        self.shift,
                        &mut rng,
                    )?
                }
                Algo::Pg => policy_loss += pg_step(st, &batch, &cfg)?,
                Algo::VrBandit => {
                    q_loss += vr_bandit_estep(st, &batch, &cfg, true)?;
                    policy_loss += vr_mstep(st, &batch, &cfg, &mut rng)?;
                }
                Algo::Vr | Algo::VrV | Algo::VrNw => {
                    let weighted = self.algo != Algo::VrNw;
                    q_loss += vr_sequential_estep(st, &batch, &cfg, weighted, &mut rng)?;
                    policy_loss += vr_mstep(st, &batch, &cfg, &mut rng)?;
                }
            }
        }
        self.epochs_done += 1;
        let st = &self.state;
        if !(st.policy.weights.is_finite() && st.q.weights.is_finite() && st.q.offset.is_finite()) {
            return Err(Error::Numeric(format!(
                "{} parameters became non-finite in epoch {}; lower the learning rates",
                self.algo, self.epochs_done
            )));
        }
        let n = batches.len().max(1) as f64;
        let trains_policy = !self.algo.is_dqn();
        self.record(
            trains_policy.then_some(policy_loss / n),
            self.algo.has_q().then_some(q_loss / n),
        )
    }

    fn record(&self, loss_policy: Option<f64>, loss_q: Option<f64>) -> Result<EpochRecord> {
        let st = &self.state;
        let report = RankingEval::default().evaluate(&self.eval, &st.featurizer, |f| st.scores(f))?;
        let bias = if self.algo.has_q() {
            Some(overestimation_bias(
                &st.q,
                &self.eval,
                &st.featurizer,
                effective_gamma(self.algo, &self.config),
            )?)
        } else {
            None
        };
        let loss_logging = if self.algo.needs_logging_estimate() {
            let all: Vec<&Sample> = self.train.samples.iter().collect();
            Some(mle_loss(&st.logging, &all)?)
        } else {
            None
        };
        Ok(EpochRecord {
            epoch: self.epochs_done,
            algo: self.algo,
            seed: self.seed,
            loss_policy,
            loss_q,
            loss_logging,
            hr5: report.hr_at(5),
            hr20: report.hr_at(20),
            ndcg5: report.ndcg_at(5),
            ndcg20: report.ndcg_at(20),
            bias,
        })
    }

    /// Runs until `epochs` epochs are complete in total.
    pub fn run(&mut self, epochs: usize) -> Result<Vec<EpochRecord>> {
        let mut trace = Vec::new();
        while self.epochs_done < epochs {
            trace.push(self.run_epoch()?);
        }
        Ok(trace)
    }
}

pub struct TrainOutput {
    pub state: LearnerState,
    pub trace: Vec<EpochRecord>,
}

pub fn train(
    algo: Algo,
    data: &LoggedDataset,
    eval: Option<&LoggedDataset>,
    config: &VRConfig,
    epochs: usize,
    seed: u64,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(algo, data, eval, config, seed)?;
    let trace = trainer.run(epochs)?;
    Ok(TrainOutput {
        state: trainer.into_state(),
        trace,
    })
}
