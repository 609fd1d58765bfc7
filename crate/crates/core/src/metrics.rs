//! Ranking and diagnostic metrics over full-catalog scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Featurizer, StateFeatures};
use crate::mdp::{returns_to_go, Feedback, Item, LoggedDataset};
use crate::models::LinearQFunction;

/// 1-based rank of `target`; ties go to the smaller item id.
pub fn rank_of(scores: &[f64], target: Item) -> usize {
    let t = target.index();
    let ts = scores[t];
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if s > ts || (s == ts && i < t) {
            rank += 1;
        }
    }
    rank
}

/// Indices of the `k` best items, best first, ties broken by ascending id.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let by_score = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    let k = k.min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, by_score);
        idx.truncate(k);
    }
    idx.sort_by(by_score);
    idx
}

pub fn hit(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

/// Single-relevant-item NDCG: the ideal DCG is 1.
pub fn ndcg(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Mean HR@k and NDCG@k from 1-based ranks.
pub fn hr_ndcg(ranks: &[usize], k: usize) -> Result<(f64, f64)> {
    if ranks.is_empty() {
        return Err(Error::Validation("empty test set".into()));
    }
    let n = ranks.len() as f64;
    let hr = ranks.iter().map(|&r| hit(r, k)).sum::<f64>() / n;
    let nd = ranks.iter().map(|&r| ndcg(r, k)).sum::<f64>() / n;
    Ok((hr, nd))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingEval {
    pub ks: Vec<usize>,
    pub per_feedback: bool,
}

impl Default for RankingEval {
    fn default() -> Self {
        RankingEval {
            ks: vec![5, 20],
            per_feedback: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub count: usize,
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_feedback: BTreeMap<String, RankingReport>,
}

impl RankingReport {
    pub fn hr_at(&self, k: usize) -> f64 {
        self.hr.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }
}

impl RankingEval {
    pub fn validate(&self, catalog_size: usize) -> Result<()> {
        if self.ks.is_empty() {
            return Err(Error::Config("no ranking cutoffs given".into()));
        }
        for &k in &self.ks {
            if k == 0 || k > catalog_size {
                return Err(Error::Config(format!(
                    "cutoff k={k} outside [1, {catalog_size}]"
                )));
            }
        }
        Ok(())
    }

    /// Ranks every logged action of `data` under `scorer`.
    pub fn evaluate<F>(&self, data: &LoggedDataset, featurizer: &Featurizer, scorer: F) -> Result<RankingReport>
    where
        F: Fn(&StateFeatures) -> Result<Vec<f64>>,
    {
        self.validate(data.catalog_size())?;
        let mut ranks = Vec::with_capacity(data.num_transitions());
        let mut feedbacks = Vec::with_capacity(data.num_transitions());
        for t in data.transitions() {
            let f = featurizer.featurize(&t.state)?;
            let scores = scorer(&f)?;
            ranks.push(rank_of(&scores, t.action));
            feedbacks.push(t.feedback);
        }
        let mut report = self.report(&ranks)?;
        if self.per_feedback {
            for fb in [Feedback::Click, Feedback::Purchase] {
                let sub: Vec<usize> = ranks
                    .iter()
                    .zip(&feedbacks)
                    .filter(|(_, f)| **f == fb)
                    .map(|(r, _)| *r)
                    .collect();
                if !sub.is_empty() {
                    report.by_feedback.insert(fb.as_str().to_string(), self.report(&sub)?);
                }
            }
        }
        Ok(report)
    }

    pub fn report(&self, ranks: &[usize]) -> Result<RankingReport> {
        let mut report = RankingReport {
            count: ranks.len(),
            ..Default::default()
        };
        for &k in &self.ks {
            let (h, n) = hr_ndcg(ranks, k)?;
            report.hr.insert(k, h);
            report.ndcg.insert(k, n);
        }
        Ok(report)
    }
}

/// Mean of `max(Q(s,a) − V(s), 0)²` over logged pairs, where `V(s)` is the
/// observed discounted return-to-go.
pub fn overestimation_bias(
    q: &LinearQFunction,
    data: &LoggedDataset,
    featurizer: &Featurizer,
    gamma: f64,
) -> Result<f64> {
    if data.num_transitions() == 0 {
        return Err(Error::Validation("empty test set".into()));
    }
    let mut total = 0.0;
    for traj in data.trajectories() {
        let rewards: Vec<f64> = traj.rewards().collect();
        let values = returns_to_go(&rewards, gamma);
        for (t, v) in traj.transitions().iter().zip(values) {
            let f = featurizer.featurize(&t.state)?;
            total += bias_term(q.value(&f, t.action)?, v);
        }
    }
    Ok(total / data.num_transitions() as f64)
}

pub fn bias_term(q: f64, v: f64) -> f64 {
    let e = (q - v).max(0.0);
    e * e
}

/// Distinct recommended items as a percentage of the catalog.
pub fn coverage_percent(distinct: usize, catalog_size: usize) -> f64 {
    100.0 * distinct as f64 / catalog_size as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of(&[0.1, 0.9, 0.3], Item(1)), 1);
        assert_eq!(rank_of(&[0.5; 6], Item(0)), 1);
        assert_eq!(rank_of(&[0.5; 6], Item(4)), 5);
        assert_eq!(rank_of(&[0.2, 0.9, 0.2, 0.1], Item(2)), 3);
    }

    #[test]
    fn ndcg_closed_forms() {
        assert_eq!(hr_ndcg(&[1, 1, 1], 5).unwrap(), (1.0, 1.0));
        assert!((ndcg(3, 5) - 0.5).abs() < 1e-15);
        assert_eq!(hr_ndcg(&[21], 20).unwrap(), (0.0, 0.0));
        assert!(hr_ndcg(&[], 5).is_err());
    }

    #[test]
    fn top_k_breaks_ties_by_id() {
        assert_eq!(top_k(&[0.5, 0.7, 0.5, 0.7, 0.1], 3), vec![1, 3, 0]);
        assert_eq!(top_k(&[1.0, 2.0], 5), vec![1, 0]);
    }

    #[test]
    fn bias_examples() {
        assert_eq!(bias_term(-3.0, -3.0), 0.0);
        assert_eq!(bias_term(-4.0, -3.0), 0.0);
        assert_eq!(bias_term(-1.0, -3.0), 4.0);
    }

    #[test]
    fn cutoffs_are_validated() {
        let eval = RankingEval {
            ks: vec![5, 200],
            per_feedback: false,
        };
        assert!(eval.validate(100).is_err());
        assert!(RankingEval::default().validate(100).is_ok());
    }
}
