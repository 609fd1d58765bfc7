//! Logged data for a seed: simulated from the configured world or read from
//! a session log, then split by session.

use anyhow::Result;
use vrank_core::log::read_session_log;
use vrank_core::mdp::split_dataset;
use vrank_core::sim::generate_logged;
use vrank_core::{Error, LoggedDataset, SimWorld};

use crate::config::ExperimentConfig;

pub struct Splits {
    pub train: LoggedDataset,
    pub valid: LoggedDataset,
    pub test: LoggedDataset,
}

pub fn dataset(config: &ExperimentConfig, seed: u64) -> Result<LoggedDataset> {
    if let Some(path) = &config.data.path {
        return Ok(read_session_log(path, config.world.catalog_size, config.world.reward_spec)?);
    }
    let mut world = SimWorld::new(config.world_for(seed))?;
    Ok(generate_logged(
        &mut world,
        &config.data.behavior_policy(),
        config.data.sessions,
        config.data.max_len,
        config.world.reward_spec,
    )?)
}

pub fn split(config: &ExperimentConfig, data: &LoggedDataset, seed: u64) -> Result<Splits> {
    let [a, b, c] = config.data.split;
    match split_dataset(data, (a, b, c), seed) {
        Ok((train, valid, test)) => Ok(Splits { train, valid, test }),
        Err(Error::EmptyDataset(_)) => Err(Error::Validation(format!(
            "{} sessions leave a train, validation or test split empty",
            data.num_sessions()
        ))
        .into()),
        Err(e) => Err(e.into()),
    }
}

pub fn splits(config: &ExperimentConfig, seed: u64) -> Result<Splits> {
    split(config, &dataset(config, seed)?, seed)
}
