//! JSON checkpoints. Floats are written with round-trip precision, so a
//! reload reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{LearnerState, VRConfig};

pub const FORMAT: &str = "vrank-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub epochs_done: usize,
    pub seed: u64,
    pub config: VRConfig,
    pub state: LearnerState,
}

impl Checkpoint {
    pub fn new(state: LearnerState, epochs_done: usize, seed: u64, config: VRConfig) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            epochs_done,
            seed,
            config,
            state,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|source| Error::Serde {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Serde {
            path: path.to_path_buf(),
            source,
        })?;
        if ckpt.format != FORMAT {
            return Err(Error::Validation(format!(
                "{}: unsupported checkpoint format {:?}",
                path.display(),
                ckpt.format
            )));
        }
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Checks head shapes against the featurizer.
    pub fn validate(&self) -> Result<()> {
        let st = &self.state;
        let (dim, n) = (st.featurizer.dim(), st.featurizer.catalog_size);
        for (name, rows, cols) in [
            ("policy", st.policy.dim(), st.policy.catalog_size()),
            ("logging", st.logging.dim(), st.logging.catalog_size()),
            ("q", st.q.weights.rows(), st.q.weights.cols()),
            ("target", st.target.q().weights.rows(), st.target.q().weights.cols()),
        ] {
            if rows != dim || cols != n {
                return Err(Error::Validation(format!(
                    "checkpoint {name} head is {rows}x{cols}, expected {dim}x{n}"
                )));
            }
        }
        Ok(())
    }
}
