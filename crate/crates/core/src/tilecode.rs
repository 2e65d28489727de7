//! Hashed tile coding with an optional always-on bias unit.
//!
//! Tiling `t` of `n` displaces input dimension `j` by `t·(2j+1)/n` of a tile
//! width (the asymmetric odd-multiple pattern), then floors to integer tile
//! coordinates. The coordinates are hashed with [`tile_hash`] into
//! `[0, memory_size)`; the bias unit is index `memory_size`.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Configuration block of a [`TileCoder`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileCoderConfig {
    pub input_dim: usize,
    pub tilings: usize,
    /// Tile width per input dimension, in normalized units.
    pub tile_width: Vec<f64>,
    pub memory_size: usize,
    pub bias: bool,
    pub hash_seed: u64,
}

impl Default for TileCoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 4,
            tilings: 100,
            tile_width: vec![1.0; 4],
            memory_size: 2048,
            bias: true,
            hash_seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct TileCoder {
    config: TileCoderConfig,
    clamped: AtomicU64,
}

impl Clone for TileCoder {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of one tile: start from `mix64(seed ^ 0x9e3779b97f4a7c15)`, fold in the
/// tiling index and then each coordinate (as two's-complement `u64`) with
/// `h = mix64(h ^ v)`, and reduce modulo `memory_size`.
pub fn tile_hash(coords: &[i64], tiling: usize, seed: u64, memory_size: usize) -> usize {
    let mut h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    h = mix64(h ^ tiling as u64);
    for &c in coords {
        h = mix64(h ^ c as u64);
    }
    (h % memory_size as u64) as usize
}

impl TileCoder {
    pub fn new(config: TileCoderConfig) -> Result<Self> {
        if config.input_dim == 0 || config.tilings == 0 || config.memory_size == 0 {
            return Err(Error::invalid("input_dim, tilings and memory_size must be positive"));
        }
        if config.tile_width.len() != config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: config.input_dim,
                found: config.tile_width.len(),
            });
        }
        if config.tile_width.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("tile widths must be positive and finite"));
        }
        Ok(Self { config, clamped: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &TileCoderConfig {
        &self.config
    }

    /// Length of the produced feature vectors.
    pub fn output_dim(&self) -> usize {
        self.config.memory_size + usize::from(self.config.bias)
    }

    /// Number of input components clamped into `[0, 1]` so far.
    pub fn clamped_inputs(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Integer tile coordinates of `input` in tiling `t`, before hashing.
    pub fn tile_coords(&self, input: &[f64], t: usize) -> Vec<i64> {
        let n = self.config.tilings as f64;
        input
            .iter()
            .zip(&self.config.tile_width)
            .enumerate()
            .map(|(j, (x, w))| {
                let shift = (t * (2 * j + 1)) as f64 / n;
                (x / w + shift).floor() as i64
            })
            .collect()
    }

    pub fn encode(&self, input: &[f64]) -> Result<FeatureVector> {
        if input.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                found: input.len(),
            });
        }
        let mut clamped = 0;
        let x: Vec<f64> = input
            .iter()
            .map(|v| {
                if (0.0..=1.0).contains(v) {
                    *v
                } else {
                    clamped += 1;
                    if v.is_nan() {
                        0.0
                    } else {
                        v.clamp(0.0, 1.0)
                    }
                }
            })
            .collect();
        if clamped > 0 {
            self.clamped.fetch_add(clamped, Ordering::Relaxed);
        }
        let c = &self.config;
        let mut active: Vec<usize> = (0..c.tilings)
            .map(|t| tile_hash(&self.tile_coords(&x, t), t, c.hash_seed, c.memory_size))
            .collect();
        if c.bias {
            active.push(c.memory_size);
        }
        FeatureVector::binary(self.output_dim(), active)
    }
}
