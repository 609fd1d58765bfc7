//! Fixed state featurization shared by every head.
//!
//! The vector has `2 * catalog_size` entries: a decayed bag of the clicked
//! items (most recent click weighted 1, the one before `decay`, and so on)
//! followed by a one-hot block for the last clicked item. Histories are short
//! relative to the catalog, so the vector is kept sparse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::SessionState;

pub const DEFAULT_DECAY: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures {
    dim: usize,
    /// Nonzero entries, sorted by index.
    entries: Vec<(usize, f64)>,
}

impl StateFeatures {
    pub fn zeros(dim: usize) -> Self {
        StateFeatures {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        StateFeatures {
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    /// Unit vector along `index`.
    pub fn one_hot(dim: usize, index: usize) -> Self {
        assert!(index < dim, "one-hot index {index} out of {dim}");
        StateFeatures {
            dim,
            entries: vec![(index, 1.0)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nonzeros(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, x) in &self.entries {
            v[i] = x;
        }
        v
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |e| e.0)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|(_, x)| x * x).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub catalog_size: usize,
    pub decay: f64,
}

impl Featurizer {
    pub fn new(catalog_size: usize, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("feature decay must be in [0,1), got {decay}")));
        }
        if catalog_size < 2 {
            return Err(Error::Config(format!(
                "catalog size must be at least 2, got {catalog_size}"
            )));
        }
        Ok(Featurizer {
            catalog_size,
            decay,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.catalog_size
    }

    pub fn featurize(&self, state: &SessionState) -> Result<StateFeatures> {
        featurize(state, self.catalog_size, self.decay)
    }
}

pub fn featurize(state: &SessionState, catalog_size: usize, decay: f64) -> Result<StateFeatures> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::Config(format!("feature decay must be in [0,1), got {decay}")));
    }
    let history = state.history();
    let mut bag = vec![0.0; catalog_size];
    let mut weight = 1.0;
    for item in history.iter().rev() {
        let i = item.index();
        if i >= catalog_size {
            return Err(Error::Index {
                index: i,
                limit: catalog_size,
            });
        }
        bag[i] += weight;
        weight *= decay;
    }
    let mut entries: Vec<(usize, f64)> = bag
        .into_iter()
        .enumerate()
        .filter(|(_, v)| *v != 0.0)
        .collect();
    if let Some(last) = state.last() {
        entries.push((catalog_size + last.index(), 1.0));
    }
    Ok(StateFeatures {
        dim: 2 * catalog_size,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Item;

    fn state(items: &[u32]) -> SessionState {
        SessionState::new(items.iter().map(|&i| Item(i)).collect())
    }

    #[test]
    fn empty_history_is_zero() {
        let f = featurize(&SessionState::empty(), 4, 0.5).unwrap();
        assert_eq!(f.to_dense(), vec![0.0; 8]);
    }

    #[test]
    fn single_item() {
        let f = featurize(&state(&[2]), 4, 0.5).unwrap();
        assert_eq!(f.to_dense(), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn decay_series() {
        let f = featurize(&state(&[1, 1, 3]), 4, 0.5).unwrap();
        assert_eq!(f.to_dense(), vec![0.0, 0.75, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_item_and_decay() {
        assert!(matches!(
            featurize(&state(&[5]), 4, 0.5),
            Err(Error::Index { index: 5, limit: 4 })
        ));
        assert!(matches!(featurize(&state(&[1]), 4, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn bag_entries_are_bounded() {
        let f = featurize(&state(&[0; 60]), 3, 0.8).unwrap();
        let bound = 1.0 / (1.0 - 0.8);
        assert!(f.get(0) <= bound && f.get(0) > 4.99);
    }

    #[test]
    fn injective_on_short_histories() {
        let n = 4;
        let mut seen = Vec::new();
        let mut histories = vec![vec![]];
        for a in 0..n {
            histories.push(vec![a]);
            for b in 0..n {
                histories.push(vec![a, b]);
            }
        }
        for h in &histories {
            let f = featurize(&state(h), n as usize, 0.8).unwrap().to_dense();
            assert!(!seen.contains(&f), "collision for {h:?}");
            seen.push(f);
        }
    }
}
