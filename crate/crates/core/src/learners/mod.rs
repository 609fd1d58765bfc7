//! Training algorithms: maximum likelihood, the DQN family, off-policy
//! policy gradient with capped importance weights, and value ranking (an EM
//! loop alternating a weighted value regression with a regularized policy
//! projection).

mod steps;
pub mod tabular;
mod train;

pub use steps::*;
pub use train::*;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Featurizer, StateFeatures, DEFAULT_DECAY};
use crate::models::{LinearQFunction, LinearSoftmaxPolicy, TargetSnapshot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Mle,
    Dqn,
    DqnOne,
    DqnNs,
    Pg,
    VrBandit,
    Vr,
    VrNw,
    VrV,
}

impl Algo {
    pub const ALL: [Algo; 9] = [
        Algo::Mle,
        Algo::Dqn,
        Algo::DqnOne,
        Algo::DqnNs,
        Algo::Pg,
        Algo::VrBandit,
        Algo::Vr,
        Algo::VrNw,
        Algo::VrV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Mle => "mle",
            Algo::Dqn => "dqn",
            Algo::DqnOne => "dqn_one",
            Algo::DqnNs => "dqn_ns",
            Algo::Pg => "pg",
            Algo::VrBandit => "vr_bandit",
            Algo::Vr => "vr",
            Algo::VrNw => "vr_nw",
            Algo::VrV => "vr_v",
        }
    }

    pub fn is_dqn(self) -> bool {
        matches!(self, Algo::Dqn | Algo::DqnOne | Algo::DqnNs)
    }

    pub fn is_vr(self) -> bool {
        matches!(self, Algo::VrBandit | Algo::Vr | Algo::VrNw | Algo::VrV)
    }

    /// Whether the algorithm trains a value head.
    pub fn has_q(self) -> bool {
        self.is_dqn() || self.is_vr()
    }

    /// Whether the logging-policy estimate is fitted before the main loop.
    pub fn needs_logging_estimate(self) -> bool {
        self == Algo::Pg || self.is_vr()
    }

    /// DQN variants rank by value; everything else by the learned policy.
    pub fn ranks_by_q(self) -> bool {
        self.is_dqn()
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// Hyperparameters shared by every learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VRConfig {
    /// Temperature of the posterior `q ∝ p_θ · exp(Q/α)`.
    pub alpha: f64,
    /// Weight of the posterior versus the logging estimate in the M-step.
    pub beta: f64,
    pub gamma: f64,
    /// Cap on policy-gradient importance weights.
    pub cap: f64,
    /// Floor applied to importance-weight denominators.
    pub is_floor: f64,
    pub sync_interval: usize,
    pub lr_policy: f64,
    pub lr_logging: f64,
    pub lr_q: f64,
    /// Catalogs up to this size use exact expectations instead of samples.
    pub exact_expectation_threshold: usize,
    pub batch_size: usize,
    /// Epochs spent fitting the logging-policy estimate.
    pub pretrain_epochs: usize,
    pub decay: f64,
    /// Half-width of the uniform value-head initialization.
    pub q_init_scale: f64,
}

impl Default for VRConfig {
    fn default() -> Self {
        VRConfig {
            alpha: 1.0,
            beta: 0.4,
            gamma: 0.5,
            cap: 10.0,
            is_floor: 1e-6,
            sync_interval: 100,
            lr_policy: 0.05,
            lr_logging: 0.05,
            lr_q: 0.05,
            exact_expectation_threshold: 256,
            batch_size: 64,
            pretrain_epochs: 10,
            decay: DEFAULT_DECAY,
            q_init_scale: 1e-3,
        }
    }
}

impl VRConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must be in [0,1], got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0,1], got {}", self.gamma));
        }
        if !(self.cap.is_finite() && self.cap > 0.0) {
            return bad(format!("cap must be > 0, got {}", self.cap));
        }
        if !(self.is_floor.is_finite() && self.is_floor >= 0.0) {
            return bad(format!("is_floor must be >= 0, got {}", self.is_floor));
        }
        for (name, lr) in [
            ("lr_policy", self.lr_policy),
            ("lr_logging", self.lr_logging),
            ("lr_q", self.lr_q),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} must be > 0, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.sync_interval == 0 {
            return bad("sync_interval must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.decay) {
            return bad(format!("decay must be in [0,1), got {}", self.decay));
        }
        if !(self.q_init_scale.is_finite() && self.q_init_scale >= 0.0) {
            return bad(format!("q_init_scale must be >= 0, got {}", self.q_init_scale));
        }
        Ok(())
    }

    pub fn exact(&self, catalog_size: usize) -> bool {
        catalog_size <= self.exact_expectation_threshold
    }
}

/// Every trainable head plus the update counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub algo: Algo,
    pub featurizer: Featurizer,
    /// Learned ranking policy p_θ.
    pub policy: LinearSoftmaxPolicy,
    /// Logging-policy estimate p_ψ.
    pub logging: LinearSoftmaxPolicy,
    /// Live value head Q_φ.
    pub q: LinearQFunction,
    /// Frozen value head Q_φ̄.
    pub target: TargetSnapshot,
    pub step: u64,
}

impl LearnerState {
    /// Zero policies and a small random value head.
    pub fn init(algo: Algo, featurizer: Featurizer, config: &VRConfig, seed: u64) -> Self {
        let dim = featurizer.dim();
        let n = featurizer.catalog_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(QINIT_STREAM);
        let q = LinearQFunction::noisy(dim, n, config.q_init_scale, &mut rng);
        let target = TargetSnapshot::new(&q, config.sync_interval);
        LearnerState {
            algo,
            featurizer,
            policy: LinearSoftmaxPolicy::zeros(dim, n),
            logging: LinearSoftmaxPolicy::zeros(dim, n),
            q,
            target,
            step: 0,
        }
    }

    pub fn catalog_size(&self) -> usize {
        self.featurizer.catalog_size
    }

    /// Scores from the algorithm's native ranking head.
    pub fn scores(&self, features: &StateFeatures) -> Result<Vec<f64>> {
        if self.algo.ranks_by_q() {
            self.q.values(features)
        } else {
            self.policy.logits(features)
        }
    }

    /// Counts one update and refreshes the target when due.
    pub(crate) fn tick(&mut self) {
        self.step += 1;
        if self.target.due(self.step) {
            self.target = crate::models::sync_target(&self.q, &self.target);
        }
    }
}

pub(crate) const QINIT_STREAM: u64 = 0x51;
pub(crate) const PRETRAIN_STREAM: u64 = 0x52;
pub(crate) const EPOCH_STREAM_BASE: u64 = 0x1000;
