//! Latent-interest user simulator.
//!
//! Each item belongs to one category. A simulated user carries an interest
//! level in `[-1, 1]` per category; a recommended item is clicked with
//! probability `sigmoid(click_base + interest[category])`, a click becomes a
//! purchase when that interest exceeds `purchase_threshold`, and every click
//! raises the interest of its category by `interest_drift`.
//!
//! Every session draws from its own RNG stream, so session `i` of a world
//! behaves the same regardless of how many sessions came before it.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Featurizer, StateFeatures};
use crate::learners::LearnerState;
use crate::mdp::{Feedback, Item, LoggedDataset, RewardSpec, SessionState};
use crate::metrics::{coverage_percent, top_k};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub catalog_size: usize,
    pub num_categories: usize,
    pub click_base: f64,
    pub purchase_threshold: f64,
    pub interest_drift: f64,
    /// Mean chance that a user likes a category. Liked categories start with
    /// interest in `[interest_floor, 1]`, the rest in `[-1, -interest_floor]`.
    pub liked_fraction: f64,
    /// Category `c` is liked with probability proportional to
    /// `(c + 1)^-category_skew` (capped at 1); 0 makes all categories alike.
    pub category_skew: f64,
    pub interest_floor: f64,
    /// Recommendation attempts per simulated session.
    pub session_len: usize,
    pub reward_spec: RewardSpec,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            catalog_size: 100,
            num_categories: 20,
            click_base: 0.0,
            purchase_threshold: 0.75,
            interest_drift: 0.1,
            liked_fraction: 0.2,
            category_skew: 1.0,
            interest_floor: 0.5,
            session_len: 20,
            reward_spec: RewardSpec::multi_objective(),
            seed: 1,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.catalog_size < 2 {
            return Err(Error::Config("catalog_size must be >= 2".into()));
        }
        if self.num_categories == 0 || self.num_categories > self.catalog_size {
            return Err(Error::Config(format!(
                "num_categories must be in [1, catalog_size], got {}",
                self.num_categories
            )));
        }
        for (name, v) in [
            ("click_base", self.click_base),
            ("purchase_threshold", self.purchase_threshold),
            ("interest_drift", self.interest_drift),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        for (name, v) in [
            ("liked_fraction", self.liked_fraction),
            ("interest_floor", self.interest_floor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if !(self.category_skew.is_finite() && self.category_skew >= 0.0) {
            return Err(Error::Config(format!(
                "category_skew must be >= 0, got {}",
                self.category_skew
            )));
        }
        if self.session_len == 0 {
            return Err(Error::Config("session_len must be >= 1".into()));
        }
        self.reward_spec.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub clicked: bool,
    pub purchased: bool,
}

#[derive(Clone, Debug)]
pub struct SimWorld {
    config: WorldConfig,
    item_category: Vec<usize>,
    interest: Vec<f64>,
    click_counts: Vec<u64>,
    rng: ChaCha8Rng,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SimWorld {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut item_category: Vec<usize> =
            (0..config.catalog_size).map(|i| i % config.num_categories).collect();
        item_category.shuffle(&mut rng);
        let mut world = SimWorld {
            interest: vec![0.0; config.num_categories],
            click_counts: vec![0; config.catalog_size],
            item_category,
            rng,
            config,
        };
        world.begin_session(0);
        Ok(world)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn catalog_size(&self) -> usize {
        self.config.catalog_size
    }

    pub fn category(&self, item: Item) -> usize {
        self.item_category[item.index()]
    }

    pub fn item_categories(&self) -> &[usize] {
        &self.item_category
    }

    pub fn interest(&self) -> &[f64] {
        &self.interest
    }

    pub fn click_counts(&self) -> &[u64] {
        &self.click_counts
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Overrides the current user's interest vector (entries clamped).
    pub fn set_interest(&mut self, interest: Vec<f64>) -> Result<()> {
        if interest.len() != self.config.num_categories {
            return Err(Error::Shape {
                expected: self.config.num_categories,
                actual: interest.len(),
            });
        }
        self.interest = interest.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Ok(())
    }

    /// Starts session `id` on its own RNG stream with a fresh user.
    pub fn begin_session(&mut self, id: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(id + 1);
        let like = self.like_probabilities();
        let floor = self.config.interest_floor;
        self.interest = like
            .iter()
            .map(|&p| {
                let magnitude = floor + (1.0 - floor) * rng.gen::<f64>();
                if rng.gen::<f64>() < p {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect();
        self.rng = rng;
    }

    /// Per-category probability that a fresh user likes it.
    pub fn like_probabilities(&self) -> Vec<f64> {
        let c = self.config.num_categories;
        let w: Vec<f64> = (0..c)
            .map(|i| ((i + 1) as f64).powf(-self.config.category_skew))
            .collect();
        let total: f64 = w.iter().sum();
        w.iter()
            .map(|x| (self.config.liked_fraction * c as f64 * x / total).min(1.0))
            .collect()
    }

    pub fn click_probability(&self, item: Item) -> f64 {
        sigmoid(self.config.click_base + self.interest[self.category(item)])
    }

    fn check(&self, item: Item) -> Result<()> {
        if item.index() >= self.config.catalog_size {
            return Err(Error::Index {
                index: item.index(),
                limit: self.config.catalog_size,
            });
        }
        Ok(())
    }

    /// Ground-truth expected raw reward of recommending `item` now.
    pub fn expected_reward(&self, item: Item, spec: &RewardSpec) -> f64 {
        let c = self.category(item);
        let value = if self.interest[c] > self.config.purchase_threshold {
            spec.purchase_reward
        } else {
            spec.click_reward
        };
        self.click_probability(item) * value
    }

    /// Shows `item` to the current user and applies the response.
    pub fn step(&mut self, item: Item) -> Result<StepOutcome> {
        self.check(item)?;
        let c = self.category(item);
        let p = self.click_probability(item);
        let clicked = self.rng.gen::<f64>() < p;
        let mut purchased = false;
        if clicked {
            purchased = self.interest[c] > self.config.purchase_threshold;
            self.interest[c] = (self.interest[c] + self.config.interest_drift).clamp(-1.0, 1.0);
            self.click_counts[item.index()] += 1;
        }
        Ok(StepOutcome { clicked, purchased })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Random,
    MaximumReward,
    Popularity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPolicy {
    pub kind: BehaviorKind,
    pub top_k: usize,
    /// Click counts for [`BehaviorKind::Popularity`]; when empty the world's
    /// running counts are used.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub popularity: Vec<u64>,
}

impl BehaviorPolicy {
    pub fn random() -> Self {
        BehaviorPolicy {
            kind: BehaviorKind::Random,
            top_k: 1,
            popularity: Vec::new(),
        }
    }

    pub fn maximum_reward(top_k: usize) -> Self {
        BehaviorPolicy {
            kind: BehaviorKind::MaximumReward,
            top_k,
            popularity: Vec::new(),
        }
    }

    /// Ranks by click counts observed in `data`.
    pub fn popularity_from(data: &LoggedDataset, top_k: usize) -> Self {
        let mut counts = vec![0; data.catalog_size()];
        for t in data.transitions() {
            counts[t.action.index()] += 1;
        }
        BehaviorPolicy {
            kind: BehaviorKind::Popularity,
            top_k,
            popularity: counts,
        }
    }

    pub fn validate(&self, catalog_size: usize) -> Result<()> {
        if self.kind != BehaviorKind::Random && (self.top_k == 0 || self.top_k > catalog_size) {
            return Err(Error::Config(format!(
                "behavior top_k must be in [1, {catalog_size}], got {}",
                self.top_k
            )));
        }
        Ok(())
    }
}

/// Something that can produce a ranked recommendation list in the simulator.
/// The first entry of the list is the item shown.
pub trait Recommender {
    fn recommend(&self, world: &mut SimWorld, state: &SessionState, k: usize) -> Result<Vec<usize>>;
}

impl Recommender for BehaviorPolicy {
    fn recommend(&self, world: &mut SimWorld, _state: &SessionState, k: usize) -> Result<Vec<usize>> {
        let n = world.catalog_size();
        match self.kind {
            BehaviorKind::Random => {
                Ok(rand::seq::index::sample(world.rng(), n, k.clamp(1, n)).into_vec())
            }
            BehaviorKind::MaximumReward => {
                let spec = world.config.reward_spec;
                let scores: Vec<f64> = (0..n)
                    .map(|i| world.expected_reward(Item::from(i), &spec))
                    .collect();
                Ok(pick_from_top(&scores, self.top_k, k, world.rng()))
            }
            BehaviorKind::Popularity => {
                let counts = if self.popularity.is_empty() {
                    world.click_counts.clone()
                } else {
                    self.popularity.clone()
                };
                let scores: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
                Ok(pick_from_top(&scores, self.top_k, k, world.rng()))
            }
        }
    }
}

/// Draws the shown item uniformly from the `pool` best, then lists the rest
/// of the ranking behind it.
fn pick_from_top(scores: &[f64], pool: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let ranked = top_k(scores, scores.len());
    let pool = pool.clamp(1, ranked.len());
    let shown = if pool == 1 {
        ranked[0]
    } else {
        ranked[rng.gen_range(0..pool)]
    };
    let mut list = vec![shown];
    list.extend(ranked.iter().copied().filter(|&i| i != shown).take(k.saturating_sub(1)));
    list
}

/// Greedy ranking by a learned scoring head.
pub struct GreedyScorer<F> {
    pub featurizer: Featurizer,
    pub score: F,
}

impl<F> Recommender for GreedyScorer<F>
where
    F: Fn(&StateFeatures) -> Result<Vec<f64>>,
{
    fn recommend(&self, _world: &mut SimWorld, state: &SessionState, k: usize) -> Result<Vec<usize>> {
        let f = self.featurizer.featurize(state)?;
        Ok(top_k(&(self.score)(&f)?, k.max(1)))
    }
}

impl Recommender for LearnerState {
    fn recommend(&self, _world: &mut SimWorld, state: &SessionState, k: usize) -> Result<Vec<usize>> {
        let f = self.featurizer.featurize(state)?;
        Ok(top_k(&self.scores(&f)?, k.max(1)))
    }
}

/// Runs `behavior` for `num_sessions` sessions of up to `max_len`
/// recommendations. Only clicked items enter the session; sessions with fewer
/// than three clicks are dropped.
pub fn generate_logged(
    world: &mut SimWorld,
    behavior: &BehaviorPolicy,
    num_sessions: usize,
    max_len: usize,
    reward_spec: RewardSpec,
) -> Result<LoggedDataset> {
    if max_len < crate::mdp::MIN_SESSION_LEN {
        return Err(Error::Config(format!("max_len must be >= 3, got {max_len}")));
    }
    behavior.validate(world.catalog_size())?;
    reward_spec.validate()?;
    let mut sessions = Vec::with_capacity(num_sessions);
    for s in 0..num_sessions {
        world.begin_session(s as u64);
        let mut state = SessionState::empty();
        let mut events = Vec::new();
        for _ in 0..max_len {
            let item = Item::from(behavior.recommend(world, &state, 1)?[0]);
            let out = world.step(item)?;
            if out.clicked {
                let fb = if out.purchased {
                    Feedback::Purchase
                } else {
                    Feedback::Click
                };
                events.push((item, fb));
                state = state.extended(item);
            }
        }
        if events.len() >= crate::mdp::MIN_SESSION_LEN {
            sessions.push(events);
        }
    }
    if sessions.is_empty() {
        return Err(Error::EmptyDataset("no simulated session reached three clicks".into()));
    }
    LoggedDataset::from_sessions(&sessions, world.catalog_size(), reward_spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub steps: usize,
    pub clicks: usize,
    pub purchases: usize,
    pub ctr: f64,
    /// Distinct items across all top-k lists, percent of catalog.
    pub coverage: f64,
    pub k: usize,
}

/// Online evaluation: sessions of `session_len` steps on fresh users, showing
/// the recommender's first item each step, until `num_steps` steps are done.
/// Rollout users come from streams disjoint from [`generate_logged`]'s.
pub fn online_rollout<R: Recommender + ?Sized>(
    world: &mut SimWorld,
    policy: &R,
    num_steps: usize,
    top_k: usize,
) -> Result<RolloutReport> {
    if num_steps == 0 {
        return Err(Error::Config("num_steps must be >= 1".into()));
    }
    let mut seen = HashSet::new();
    let mut clicks = 0;
    let mut purchases = 0;
    let mut done = 0;
    let mut episode = 0u64;
    while done < num_steps {
        world.begin_session(ROLLOUT_STREAM_BASE + episode);
        episode += 1;
        let mut state = SessionState::empty();
        for _ in 0..world.config.session_len {
            if done == num_steps {
                break;
            }
            let list = policy.recommend(world, &state, top_k)?;
            seen.extend(list.iter().take(top_k).copied());
            let item = Item::from(list[0]);
            let out = world.step(item)?;
            if out.clicked {
                clicks += 1;
                purchases += usize::from(out.purchased);
                state = state.extended(item);
            }
            done += 1;
        }
    }
    Ok(RolloutReport {
        steps: num_steps,
        clicks,
        purchases,
        ctr: clicks as f64 / num_steps as f64,
        coverage: coverage_percent(seen.len(), world.catalog_size()),
        k: top_k,
    })
}

const ROLLOUT_STREAM_BASE: u64 = 1 << 40;

#[cfg(test)]
mod tests {
    use super::*;

    fn world(cfg: WorldConfig) -> SimWorld {
        SimWorld::new(cfg).unwrap()
    }

    #[test]
    fn neutral_user_clicks_half_the_time() {
        let mut w = world(WorldConfig {
            click_base: 0.0,
            ..WorldConfig::default()
        });
        w.set_interest(vec![0.0; 20]).unwrap();
        assert_eq!(w.click_probability(Item(3)), 0.5);
    }

    #[test]
    fn every_category_is_used_once_per_item() {
        let w = world(WorldConfig::default());
        let mut counts = [0; 20];
        for &c in w.item_categories() {
            counts[c] += 1;
        }
        assert!(counts.iter().all(|&c| c == 5));
    }

    #[test]
    fn invalid_item_is_an_index_error() {
        let mut w = world(WorldConfig::default());
        assert!(matches!(w.step(Item(100)), Err(Error::Index { .. })));
    }

    #[test]
    fn drift_is_clamped() {
        let mut w = world(WorldConfig {
            click_base: 50.0,
            interest_drift: 0.3,
            ..WorldConfig::default()
        });
        w.set_interest(vec![0.9; 20]).unwrap();
        let c = w.category(Item(0));
        for _ in 0..3 {
            assert!(w.step(Item(0)).unwrap().clicked);
        }
        assert_eq!(w.interest()[c], 1.0);
    }

    #[test]
    fn purchases_need_high_interest() {
        let mut w = world(WorldConfig {
            click_base: 50.0,
            interest_drift: 0.0,
            ..WorldConfig::default()
        });
        w.set_interest(vec![0.2; 20]).unwrap();
        assert_eq!(
            w.step(Item(1)).unwrap(),
            StepOutcome {
                clicked: true,
                purchased: false
            }
        );
        w.set_interest(vec![0.8; 20]).unwrap();
        assert!(w.step(Item(1)).unwrap().purchased);
    }

    #[test]
    fn greedy_top1_maximum_reward_logs_only_the_best() {
        let mut w = world(WorldConfig::default());
        let data = generate_logged(&mut w, &BehaviorPolicy::maximum_reward(1), 50, 10, RewardSpec::default()).unwrap();
        // The user's best category changes through drift, so recompute per step.
        let mut w2 = world(WorldConfig::default());
        let spec = RewardSpec::default();
        let mut checked = 0;
        for s in 0..50u64 {
            w2.begin_session(s);
            let mut ranks = Vec::new();
            for _ in 0..10 {
                let scores: Vec<f64> =
                    (0..100).map(|i| w2.expected_reward(Item::from(i), &spec)).collect();
                let best = top_k(&scores, 1)[0];
                let out = w2.step(Item::from(best)).unwrap();
                if out.clicked {
                    ranks.push(best);
                }
            }
            if ranks.len() >= 3 {
                let traj = &data.trajectories()[checked];
                let logged: Vec<usize> = traj.transitions().iter().map(|t| t.action.index()).collect();
                assert_eq!(logged, ranks);
                checked += 1;
            }
        }
        assert_eq!(checked, data.num_sessions());
    }

    #[test]
    fn fixed_item_coverage() {
        let mut w = world(WorldConfig::default());
        let fixed = GreedyScorer {
            featurizer: Featurizer::new(100, 0.8).unwrap(),
            score: |_: &StateFeatures| -> Result<Vec<f64>> {
                let mut s = vec![0.0; 100];
                s[7] = 1.0;
                Ok(s)
            },
        };
        let rep = online_rollout(&mut w, &fixed, 500, 1).unwrap();
        assert_eq!(rep.coverage, 1.0);
    }

    #[test]
    fn certain_clicks_give_unit_ctr() {
        let mut w = world(WorldConfig {
            click_base: 100.0,
            ..WorldConfig::default()
        });
        let rep = online_rollout(&mut w, &BehaviorPolicy::random(), 1000, 3).unwrap();
        assert_eq!(rep.ctr, 1.0);
    }

    #[test]
    fn rollout_needs_steps() {
        let mut w = world(WorldConfig::default());
        assert!(online_rollout(&mut w, &BehaviorPolicy::random(), 0, 1).is_err());
    }

    #[test]
    fn max_len_below_three_is_rejected() {
        let mut w = world(WorldConfig::default());
        assert!(generate_logged(&mut w, &BehaviorPolicy::random(), 5, 2, RewardSpec::default()).is_err());
    }

    #[test]
    fn hopeless_users_give_empty_dataset() {
        let mut w = world(WorldConfig {
            click_base: -60.0,
            ..WorldConfig::default()
        });
        assert!(matches!(
            generate_logged(&mut w, &BehaviorPolicy::random(), 20, 5, RewardSpec::default()),
            Err(Error::EmptyDataset(_))
        ));
    }
}
