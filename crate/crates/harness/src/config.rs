//! Experiment configuration. Files are TOML with one table per section;
//! every key is optional and falls back to the defaults below.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vrank_core::sim::BehaviorKind;
use vrank_core::{Algo, BehaviorPolicy, RewardSpec, VRConfig, WorldConfig};

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const GAMMA_GRID: [f64; 6] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9];
pub const ALPHA_GRID: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];
pub const BETA_GRID: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub behavior: BehaviorKind,
    /// Pool size for the greedy behaviors.
    pub behavior_top_k: usize,
    pub sessions: usize,
    pub max_len: usize,
    /// Train, validation and test fractions of the sessions.
    pub split: [f64; 3],
    /// Read sessions from this log instead of simulating them.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            behavior: BehaviorKind::Random,
            behavior_top_k: 10,
            sessions: 2000,
            max_len: 20,
            split: [0.8, 0.1, 0.1],
            path: None,
        }
    }
}

impl DataConfig {
    pub fn behavior_policy(&self) -> BehaviorPolicy {
        match self.behavior {
            BehaviorKind::Random => BehaviorPolicy::random(),
            BehaviorKind::MaximumReward => BehaviorPolicy::maximum_reward(self.behavior_top_k),
            BehaviorKind::Popularity => BehaviorPolicy {
                kind: BehaviorKind::Popularity,
                top_k: self.behavior_top_k,
                popularity: Vec::new(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algo: Algo,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algo: Algo::Vr,
            epochs: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub online_steps: usize,
    pub online_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![5, 20],
            online_steps: 10_000,
            online_k: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Gamma,
    Alpha,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepParam::Gamma => GAMMA_GRID.to_vec(),
            SweepParam::Alpha => ALPHA_GRID.to_vec(),
            SweepParam::Beta => BETA_GRID.to_vec(),
        }
    }

    pub fn apply(self, config: &mut VRConfig, value: f64) {
        match self {
            SweepParam::Gamma => config.gamma = value,
            SweepParam::Alpha => config.alpha = value,
            SweepParam::Beta => config.beta = value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub param: SweepParam,
    /// Empty means the parameter's default grid.
    pub values: Vec<f64>,
    pub algos: Vec<Algo>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            param: SweepParam::Gamma,
            values: Vec::new(),
            algos: vec![Algo::Vr],
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Vec<f64> {
        if self.values.is_empty() {
            self.param.default_grid()
        } else {
            self.values.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub learner: VRConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: DEFAULT_SEEDS.to_vec(),
            out: PathBuf::from("runs"),
            world: WorldConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            learner: VRConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Clicks worth 1, purchases worth 5.
    pub fn multi_objective() -> Self {
        let mut config = Self::default();
        config.world.reward_spec = RewardSpec::multi_objective();
        config
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        self.world.validate()?;
        self.learner.validate()?;
        let [a, b, c] = self.data.split;
        if [a, b, c].iter().any(|f| !(f.is_finite() && *f > 0.0)) || (a + b + c - 1.0).abs() > 1e-9 {
            bail!("data.split must be three positive fractions summing to 1, got {:?}", self.data.split);
        }
        if self.data.sessions == 0 {
            bail!("data.sessions must be >= 1");
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            bail!("eval.ks must be nonempty and positive");
        }
        if self.train.epochs == 0 {
            bail!("train.epochs must be >= 1");
        }
        Ok(())
    }

    /// World for `seed`; everything else stays as configured.
    pub fn world_for(&self, seed: u64) -> WorldConfig {
        WorldConfig {
            seed,
            ..self.world.clone()
        }
    }

    pub fn ks(&self) -> Vec<usize> {
        let mut ks = self.eval.ks.clone();
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}
