//! The replay study: one or more runs over recorded or synthetic data.

use std::fs::File;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::seed_tree;
use crate::error::{Error, Result};
use crate::replay::{run_replay, synthetic_dataset, Dataset, ReplayRun};

/// Dataset of run `r`: the configured file, or synthetic data seeded from
/// the `dataset` stream of the master seed.
pub fn replay_dataset(cfg: &ExperimentConfig, run: u64) -> Result<Dataset> {
    match &cfg.replay_dataset {
        Some(path) => {
            let f = File::open(path).map_err(|e| Error::Config(format!("dataset {path}: {e}")))?;
            Dataset::ingest(f)
        }
        None => synthetic_dataset(&cfg.synthetic_config(seed_tree(cfg.seed, run, "dataset"))),
    }
}

/// Runs `replay_runs` independent replays in parallel, returned in run order.
pub fn run_replay_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplayRun>> {
    cfg.validate()?;
    let rc = cfg.replay_config();
    (0..cfg.replay_runs as u64)
        .into_par_iter()
        .map(|r| run_replay(&replay_dataset(cfg, r)?, &rc))
        .collect()
}
