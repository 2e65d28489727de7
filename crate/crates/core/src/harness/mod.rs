//! Experiment driver: configuration, seeding and the studies.

pub mod config;
pub mod grid;
pub mod output;
pub mod replay_study;

use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, ReferenceKind};
pub use grid::{
    run_incremental_curves, run_predictor_sweep, run_sr_sweep, GridReference, GridSetup, IncrementalCurves,
    PredictorSweep, SrSweep,
};
pub use replay_study::run_replay_experiment;

/// Child seed for stream `component` of `trial`: the first 8 bytes,
/// little-endian, of `SHA-256("{master}|{trial}|{component}")`.
pub fn seed_tree(master_seed: u64, trial: u64, component: &str) -> u64 {
    let digest = Sha256::digest(format!("{master_seed}|{trial}|{component}").as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

/// Runs `f` on a pool of `threads` workers (0: one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(f))
}
