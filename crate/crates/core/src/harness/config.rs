//! Experiment configuration: a flat TOML table, presets, validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gridworld::{GridMap, DEFAULT_STEP_CAP};
use crate::replay::{Normalization, ReplayConfig, SyntheticConfig, SYNTHETIC_TARGETS};
use crate::signals::{SignalSampler, DEFAULT_NOISE_SIGMA};
use crate::tilecode::TileCoderConfig;

/// Where grid-world reference predictions come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Closed-form linear solves on the policy's transition matrix.
    #[default]
    Analytic,
    /// Every-visit Monte Carlo averages from the start state.
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Map file; the bundled 13×13 map when unset.
    pub map: Option<String>,
    pub epsilon: f64,
    pub gammas: Vec<f64>,
    pub sr_alphas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// SR step-size per entry of `gammas`; chosen by an SR sweep when unset.
    pub sr_alpha_per_gamma: Option<Vec<f64>>,
    pub episodes: u64,
    pub sr_episodes: u64,
    pub activation_interval: u64,
    pub signals: usize,
    pub trials: usize,
    pub seed: u64,
    pub out: String,
    pub randomize_order: bool,
    pub step_cap: u64,
    pub noise_sigma: f64,
    pub noise_on_shortest_path: bool,
    pub shortest_path_prob: f64,
    pub reference: ReferenceKind,
    pub mc_sr_episodes: u64,
    pub mc_signal_episodes: u64,
    pub incremental_gamma: f64,
    /// Step-sizes for the learning-curve study; picked by a predictor sweep
    /// at `incremental_gamma` when unset.
    pub incremental_alpha_direct: Option<f64>,
    pub incremental_alpha_sr: Option<f64>,
    /// Worker threads; 0 uses every core.
    pub parallel: usize,

    /// Dataset CSV; a synthetic dataset when unset.
    pub replay_dataset: Option<String>,
    pub replay_steps: usize,
    pub replay_runs: usize,
    pub replay_gamma: f64,
    pub replay_alpha0: f64,
    pub replay_interval: u64,
    pub replay_from_start: bool,
    pub replay_inputs: Vec<String>,
    pub replay_targets: Vec<String>,
    pub replay_streaming_normalization: bool,
    pub tilings: usize,
    pub tile_width: f64,
    pub memory_size: usize,
    pub hash_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ExperimentConfig {
    /// Full-scale settings: 13×13 map, 50 signals, 2500 episodes, 30 trials.
    pub fn full() -> Self {
        Self {
            map: None,
            epsilon: 0.3,
            gammas: vec![0.0, 0.5, 0.9],
            sr_alphas: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0],
            alphas: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            sr_alpha_per_gamma: None,
            episodes: 2500,
            sr_episodes: 10_000,
            activation_interval: 50,
            signals: 50,
            trials: 30,
            seed: 0,
            out: "out".into(),
            randomize_order: true,
            step_cap: DEFAULT_STEP_CAP,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            noise_on_shortest_path: true,
            shortest_path_prob: 1.0 / 7.0,
            reference: ReferenceKind::Analytic,
            mc_sr_episodes: 30_000,
            mc_signal_episodes: 10_000,
            incremental_gamma: 0.9,
            incremental_alpha_direct: None,
            incremental_alpha_sr: None,
            parallel: 0,
            replay_dataset: None,
            replay_steps: 21_600,
            replay_runs: 1,
            replay_gamma: 0.95,
            replay_alpha0: 0.1,
            replay_interval: 2000,
            replay_from_start: false,
            replay_inputs: vec!["shoulder_position".into(), "elbow_position".into()],
            replay_targets: SYNTHETIC_TARGETS.iter().map(|s| s.to_string()).collect(),
            replay_streaming_normalization: false,
            tilings: 100,
            tile_width: 1.0,
            memory_size: 2048,
            hash_seed: 0,
        }
    }

    /// Minutes on a laptop: 20 signals, 1000 episodes, 10 trials.
    pub fn desk() -> Self {
        Self {
            signals: 20,
            episodes: 1000,
            sr_episodes: 1000,
            trials: 10,
            replay_runs: 5,
            ..Self::full()
        }
    }

    /// Seconds: a 5×5 open map, 4 signals, 2 trials.
    pub fn smoke() -> Self {
        Self {
            map: Some("open:5x5".into()),
            gammas: vec![0.0, 0.9],
            sr_alphas: vec![0.1, 0.5],
            alphas: vec![0.25, 0.5],
            episodes: 40,
            sr_episodes: 40,
            activation_interval: 10,
            signals: 4,
            trials: 2,
            incremental_gamma: 0.9,
            replay_steps: 600,
            replay_runs: 2,
            replay_interval: 100,
            tilings: 8,
            memory_size: 256,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::Config(format!("unknown preset {other:?} (full, desk, smoke)"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the TOML serialization, hex encoded. `out` and `parallel`
    /// do not change results and are left out.
    pub fn hash(&self) -> String {
        let canonical = Self { out: String::new(), parallel: 0, ..self.clone() };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must be in [0, 1]")))
            }
        };
        rate("epsilon", self.epsilon)?;
        rate("shortest_path_prob", self.shortest_path_prob)?;
        rate("incremental_gamma", self.incremental_gamma)?;
        rate("replay_alpha0", self.replay_alpha0)?;
        for g in &self.gammas {
            rate("gammas", *g)?;
        }
        for a in self.sr_alphas.iter().chain(&self.alphas) {
            rate("alphas", *a)?;
        }
        for a in self.sr_alpha_per_gamma.iter().flatten() {
            rate("sr_alpha_per_gamma", *a)?;
        }
        for a in self.incremental_alpha_direct.iter().chain(&self.incremental_alpha_sr) {
            rate("incremental step-size", *a)?;
        }
        if !(0.0..1.0).contains(&self.replay_gamma) {
            return Err(Error::Config(format!("replay_gamma = {} must be in [0, 1)", self.replay_gamma)));
        }
        if self.gammas.is_empty() || self.sr_alphas.is_empty() || self.alphas.is_empty() {
            return Err(Error::Config("gammas, sr_alphas and alphas must be non-empty".into()));
        }
        if let Some(v) = &self.sr_alpha_per_gamma {
            if v.len() != self.gammas.len() {
                return Err(Error::Config("sr_alpha_per_gamma needs one entry per gamma".into()));
            }
        }
        let counts = [
            ("episodes", self.episodes as usize),
            ("sr_episodes", self.sr_episodes as usize),
            ("activation_interval", self.activation_interval as usize),
            ("signals", self.signals),
            ("trials", self.trials),
            ("step_cap", self.step_cap as usize),
            ("mc_sr_episodes", self.mc_sr_episodes as usize),
            ("mc_signal_episodes", self.mc_signal_episodes as usize),
            ("replay_steps", self.replay_steps),
            ("replay_runs", self.replay_runs),
            ("replay_interval", self.replay_interval as usize),
            ("tilings", self.tilings),
            ("memory_size", self.memory_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.tile_width > 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0 and tile_width > 0".into()));
        }
        self.replay_config().validate()?;
        Ok(())
    }

    /// Resolves `map`: a file path, `open:WxH`, or the bundled map.
    pub fn load_map(&self) -> Result<GridMap> {
        match self.map.as_deref() {
            None | Some("dayan") => Ok(GridMap::dayan()),
            Some(spec) if spec.starts_with("open:") => {
                let dims = &spec["open:".len()..];
                let (w, h) = dims
                    .split_once('x')
                    .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
                    .ok_or_else(|| Error::Config(format!("bad open map size {dims:?}")))?;
                GridMap::open(w, h)
            }
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("map {path}: {e}")))?;
                GridMap::load(&text)
            }
        }
    }

    pub fn sampler(&self, map: &GridMap) -> SignalSampler {
        SignalSampler {
            shortest_path_prob: self.shortest_path_prob,
            noise_sigma: self.noise_sigma,
            noise_on_shortest_path: self.noise_on_shortest_path,
            ..SignalSampler::for_map(map)
        }
    }

    pub fn replay_config(&self) -> ReplayConfig {
        ReplayConfig {
            inputs: self.replay_inputs.clone(),
            targets: self.replay_targets.clone(),
            gamma: self.replay_gamma,
            alpha0: self.replay_alpha0,
            activation_interval: self.replay_interval,
            from_start: self.replay_from_start,
            coder: TileCoderConfig {
                input_dim: 2 * self.replay_inputs.len(),
                tilings: self.tilings,
                tile_width: vec![self.tile_width; 2 * self.replay_inputs.len()],
                memory_size: self.memory_size,
                bias: true,
                hash_seed: self.hash_seed,
            },
            normalization: if self.replay_streaming_normalization {
                Normalization::Streaming
            } else {
                Normalization::Observed
            },
        }
    }

    pub fn synthetic_config(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig { steps: self.replay_steps, seed, ..SyntheticConfig::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ["full", "desk", "smoke"] {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
        assert!(ExperimentConfig::preset("huge").is_err());
    }

    #[test]
    fn full_defaults() {
        let c = ExperimentConfig::full();
        assert_eq!((c.epsilon, c.signals, c.activation_interval, c.episodes, c.trials), (0.3, 50, 50, 2500, 30));
        assert_eq!((c.replay_gamma, c.replay_interval, c.replay_alpha0), (0.95, 2000, 0.1));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("epsilon = 0.3\nepsilonn = 0.2\n"), Err(Error::Config(_))));
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = ExperimentConfig::from_toml("signals = 7\ngammas = [0.5]\n").unwrap();
        assert_eq!(c.signals, 7);
        assert_eq!(c.gammas, vec![0.5]);
        assert_eq!(c.trials, 30);
    }

    #[test]
    fn rates_and_counts_are_checked() {
        for bad in ["epsilon = 1.5", "alphas = [0.5, 2.0]", "trials = 0", "gammas = []", "replay_gamma = 1.0"] {
            assert!(ExperimentConfig::from_toml(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::desk();
        let b = ExperimentConfig { seed: 1, ..ExperimentConfig::desk() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = ExperimentConfig { parallel: 3, out: "elsewhere".into(), ..ExperimentConfig::desk() };
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn map_specs() {
        let c = ExperimentConfig { map: Some("open:4x3".into()), ..ExperimentConfig::smoke() };
        let m = c.load_map().unwrap();
        assert_eq!((m.width(), m.height()), (4, 3));
        assert_eq!(ExperimentConfig::full().load_map().unwrap(), GridMap::dayan());
        assert!(ExperimentConfig { map: Some("open:ax3".into()), ..ExperimentConfig::smoke() }.load_map().is_err());
    }
}
