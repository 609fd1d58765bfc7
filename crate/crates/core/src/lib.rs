//! Offline reinforcement learning for session-based ranking.
//!
//! Logged sessions are turned into an MDP whose state is the click history.
//! Linear softmax policies and linear value heads are trained by maximum
//! likelihood, Q-learning variants, importance-weighted policy gradient, or
//! value ranking. A latent-interest simulator, ranking metrics and exact
//! reference computations on small problems come with it.

pub mod checkpoint;
pub mod error;
pub mod features;
pub mod learners;
pub mod log;
pub mod mdp;
pub mod metrics;
pub mod models;
pub mod oracles;
pub mod sim;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use features::{Featurizer, StateFeatures};
pub use learners::{train, Algo, LearnerState, Trainer, VRConfig};
pub use mdp::{Feedback, Item, LoggedDataset, RewardSpec, SessionState, Trajectory, Transition};
pub use models::{LinearQFunction, LinearSoftmaxPolicy, Matrix, TargetSnapshot};
pub use sim::{BehaviorPolicy, SimWorld, WorldConfig};
