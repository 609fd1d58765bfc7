//! Sessions, trajectories and logged datasets.
//!
//! A session is the ordered list of items a user interacted with. Every
//! prefix of that list is a [`SessionState`]; recommending the next item is
//! the action, and the feedback type decides the reward through a
//! [`RewardSpec`]. All values here are immutable once built.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sessions shorter than this are dropped at ingestion.
pub const MIN_SESSION_LEN: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Item(pub u32);

impl Item {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for Item {
    fn from(i: usize) -> Self {
        Item(i as u32)
    }
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Click,
    Purchase,
}

impl Feedback {
    pub fn as_str(self) -> &'static str {
        match self {
            Feedback::Click => "click",
            Feedback::Purchase => "purchase",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "click" => Some(Feedback::Click),
            "purchase" => Some(Feedback::Purchase),
            _ => None,
        }
    }
}

/// Clicked-item history of a session. The step index is the history length.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SessionState {
    history: Vec<Item>,
}

impl SessionState {
    pub fn new(history: Vec<Item>) -> Self {
        SessionState { history }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn history(&self) -> &[Item] {
        &self.history
    }

    pub fn step_index(&self) -> usize {
        self.history.len()
    }

    pub fn last(&self) -> Option<Item> {
        self.history.last().copied()
    }

    /// The state reached after `item` is accepted.
    pub fn extended(&self, item: Item) -> Self {
        let mut history = Vec::with_capacity(self.history.len() + 1);
        history.extend_from_slice(&self.history);
        history.push(item);
        SessionState { history }
    }
}

/// Click and purchase scores plus the shift that makes stored rewards nonpositive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub click_reward: f64,
    pub purchase_reward: f64,
    pub shift: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec::multi_objective()
    }
}

impl RewardSpec {
    /// Purchase worth five clicks.
    pub fn multi_objective() -> Self {
        RewardSpec {
            click_reward: 1.0,
            purchase_reward: 5.0,
            shift: 5.0,
        }
    }

    /// Clicks and purchases scored the same.
    pub fn uniform() -> Self {
        RewardSpec {
            click_reward: 1.0,
            purchase_reward: 1.0,
            shift: 1.0,
        }
    }

    pub fn raw(&self, feedback: Feedback) -> f64 {
        match feedback {
            Feedback::Click => self.click_reward,
            Feedback::Purchase => self.purchase_reward,
        }
    }

    pub fn stored(&self, feedback: Feedback) -> f64 {
        self.raw(feedback) - self.shift
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.click_reward, self.purchase_reward, self.shift];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reward spec values must be finite".into()));
        }
        let max_raw = self.click_reward.max(self.purchase_reward);
        if self.shift < max_raw {
            return Err(Error::Invariant(format!(
                "reward shift {} is below max raw reward {}",
                self.shift, max_raw
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: SessionState,
    pub action: Item,
    /// Stored (shifted) reward.
    pub reward: f64,
    pub next_state: SessionState,
    pub terminal: bool,
    pub feedback: Feedback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    transitions: Vec<Transition>,
}

impl Trajectory {
    /// Chains `(item, feedback)` pairs into transitions starting from the empty
    /// history. The last transition is terminal.
    pub fn from_session(events: &[(Item, Feedback)], spec: &RewardSpec) -> Self {
        let mut state = SessionState::empty();
        let mut transitions = Vec::with_capacity(events.len());
        for (k, &(action, feedback)) in events.iter().enumerate() {
            let next_state = state.extended(action);
            transitions.push(Transition {
                state,
                action,
                reward: spec.stored(feedback),
                next_state: next_state.clone(),
                terminal: k + 1 == events.len(),
                feedback,
            });
            state = next_state;
        }
        Trajectory { transitions }
    }

    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        let traj = Trajectory { transitions };
        traj.check_chain()?;
        Ok(traj)
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.reward)
    }

    /// `(item, feedback)` events in order.
    pub fn events(&self) -> Vec<(Item, Feedback)> {
        self.transitions
            .iter()
            .map(|t| (t.action, t.feedback))
            .collect()
    }

    fn check_chain(&self) -> Result<()> {
        for (k, t) in self.transitions.iter().enumerate() {
            if t.next_state != t.state.extended(t.action) {
                return Err(Error::Invariant(format!(
                    "transition {k}: next state does not extend state by the action"
                )));
            }
            if !t.reward.is_finite() {
                return Err(Error::Invariant(format!("transition {k}: non-finite reward")));
            }
            if let Some(next) = self.transitions.get(k + 1) {
                if next.state != t.next_state {
                    return Err(Error::Invariant(format!(
                        "transitions {k} and {} do not chain",
                        k + 1
                    )));
                }
                if t.terminal {
                    return Err(Error::Invariant(format!(
                        "transition {k} is terminal but not last"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Σ_{t=start}^{T-1} γ^(t-start) r_t over stored rewards.
pub fn discounted_return(traj: &Trajectory, start: usize, gamma: f64) -> Result<f64> {
    if start >= traj.horizon() {
        return Err(Error::Index {
            index: start,
            limit: traj.horizon(),
        });
    }
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in traj.rewards().skip(start) {
        total += discount * r;
        discount *= gamma;
    }
    Ok(total)
}

/// Discounted return-to-go for every step, accumulated backwards.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedDataset {
    trajectories: Vec<Trajectory>,
    catalog_size: usize,
    reward_spec: RewardSpec,
}

impl LoggedDataset {
    pub fn new(
        trajectories: Vec<Trajectory>,
        catalog_size: usize,
        reward_spec: RewardSpec,
    ) -> Result<Self> {
        let data = LoggedDataset {
            trajectories,
            catalog_size,
            reward_spec,
        };
        data.validate()?;
        Ok(data)
    }

    /// Builds a dataset from raw sessions, dropping those shorter than
    /// [`MIN_SESSION_LEN`].
    pub fn from_sessions(
        sessions: &[Vec<(Item, Feedback)>],
        catalog_size: usize,
        reward_spec: RewardSpec,
    ) -> Result<Self> {
        reward_spec.validate()?;
        let trajectories = sessions
            .iter()
            .filter(|s| s.len() >= MIN_SESSION_LEN)
            .map(|s| Trajectory::from_session(s, &reward_spec))
            .collect();
        Self::new(trajectories, catalog_size, reward_spec)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn catalog_size(&self) -> usize {
        self.catalog_size
    }

    pub fn reward_spec(&self) -> &RewardSpec {
        &self.reward_spec
    }

    pub fn num_sessions(&self) -> usize {
        self.trajectories.len()
    }

    /// Total number of logged tuples.
    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::horizon).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }

    pub fn count_feedback(&self, feedback: Feedback) -> usize {
        self.transitions().filter(|t| t.feedback == feedback).count()
    }

    pub fn max_horizon(&self) -> usize {
        self.trajectories
            .iter()
            .map(Trajectory::horizon)
            .max()
            .unwrap_or(0)
    }

    /// Raw (unshifted) reward of a stored transition.
    pub fn raw_reward(&self, t: &Transition) -> f64 {
        t.reward + self.reward_spec.shift
    }

    pub fn validate(&self) -> Result<()> {
        if self.catalog_size < 2 {
            return Err(Error::Config(format!(
                "catalog size must be at least 2, got {}",
                self.catalog_size
            )));
        }
        if self.trajectories.is_empty() {
            return Err(Error::EmptyDataset("no sessions".into()));
        }
        for (i, traj) in self.trajectories.iter().enumerate() {
            if traj.horizon() < MIN_SESSION_LEN {
                return Err(Error::Invariant(format!(
                    "session {i} has length {} < {MIN_SESSION_LEN}",
                    traj.horizon()
                )));
            }
            if traj.transitions.first().map(|t| t.state.step_index()) != Some(0) {
                return Err(Error::Invariant(format!(
                    "session {i} does not start from the empty history"
                )));
            }
            if !traj.transitions.last().is_some_and(|t| t.terminal) {
                return Err(Error::Invariant(format!(
                    "session {i}: last transition is not terminal"
                )));
            }
            traj.check_chain()?;
            for t in &traj.transitions {
                if t.action.index() >= self.catalog_size {
                    return Err(Error::Index {
                        index: t.action.index(),
                        limit: self.catalog_size,
                    });
                }
            }
        }
        Ok(())
    }

    fn with_trajectories(&self, trajectories: Vec<Trajectory>) -> Result<Self> {
        Self::new(trajectories, self.catalog_size, self.reward_spec)
    }
}

/// Recomputes stored rewards from the feedback labels under `spec`.
pub fn apply_reward_spec(data: &LoggedDataset, spec: RewardSpec) -> Result<LoggedDataset> {
    let max_raw = data
        .transitions()
        .map(|t| spec.raw(t.feedback))
        .fold(f64::NEG_INFINITY, f64::max);
    if !spec.shift.is_finite() || spec.shift < max_raw {
        return Err(Error::Invariant(format!(
            "reward shift {} is below max raw reward {max_raw}",
            spec.shift
        )));
    }
    let trajectories = data
        .trajectories
        .iter()
        .map(|traj| Trajectory {
            transitions: traj
                .transitions
                .iter()
                .map(|t| Transition {
                    reward: spec.stored(t.feedback),
                    ..t.clone()
                })
                .collect(),
        })
        .collect();
    LoggedDataset::new(trajectories, data.catalog_size, spec)
}

/// Session-level train/valid/test partition, deterministic in `seed`.
/// Each split keeps the input's session order.
pub fn split_dataset(
    data: &LoggedDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(LoggedDataset, LoggedDataset, LoggedDataset)> {
    let (ftr, fva, fte) = fractions;
    if [ftr, fva, fte].iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    if (ftr + fva + fte - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {}",
            ftr + fva + fte
        )));
    }
    let n = data.num_sessions();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ftr * n as f64).round() as usize).min(n);
    let n_valid = ((fva * n as f64).round() as usize).min(n - n_train);

    let pick = |idx: &[usize]| -> Result<LoggedDataset> {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        data.with_trajectories(idx.iter().map(|&i| data.trajectories[i].clone()).collect())
    };
    Ok((
        pick(&order[..n_train])?,
        pick(&order[n_train..n_train + n_valid])?,
        pick(&order[n_train + n_valid..])?,
    ))
}

/// Distinct session signatures, used to check partitions.
pub fn session_set(data: &LoggedDataset) -> HashSet<Vec<(Item, Feedback)>> {
    data.trajectories.iter().map(Trajectory::events).collect()
}
