//! Random cumulant signals over grid coordinates.
//!
//! A composed signal is `(sig_x(x + offset_x) + bias_x) · (sig_y(y + offset_y) + bias_y)`
//! with one primitive per axis. The shortest-path signal is standalone: a
//! per-transition cost plus a reward on the transition that reaches the goal.
//! Gaussian noise is added on top of every sample.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::GridMap;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.3;
/// Offsets are drawn from `[0, MAX_OFFSET)`.
pub const MAX_OFFSET: usize = 10;
const PERIOD_RANGE: std::ops::Range<u32> = 2..40;

/// Per-axis primitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "primitive", rename_all = "snake_case")]
pub enum Primitive {
    Fixed { value: f64 },
    /// `1.0` for the first `⌈period/2⌉` positions of each period, else `0.0`.
    Square { period: u32, invert: bool },
    /// `sin(2π·p/period)`.
    Sin { period: u32 },
    RandomBinary { table: Vec<f64> },
    RandomFloat { table: Vec<f64> },
    Unit,
}

impl Primitive {
    pub fn value(&self, position: usize) -> f64 {
        match self {
            Primitive::Fixed { value } => *value,
            Primitive::Square { period, invert } => {
                let period = *period as usize;
                let high = position % period < period.div_ceil(2);
                if high != *invert {
                    1.0
                } else {
                    0.0
                }
            }
            Primitive::Sin { period } => (2.0 * PI * position as f64 / *period as f64).sin(),
            Primitive::RandomBinary { table } | Primitive::RandomFloat { table } => {
                table[position % table.len()]
            }
            Primitive::Unit => 1.0,
        }
    }
}

/// One axis of a composed signal. Unit axes carry no offset or bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSignal {
    #[serde(flatten)]
    pub primitive: Primitive,
    pub offset: usize,
    pub bias: f64,
}

impl AxisSignal {
    pub fn value(&self, coord: usize) -> f64 {
        match self.primitive {
            Primitive::Unit => 1.0,
            ref p => p.value(coord + self.offset) + self.bias,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalKind {
    Composed { x: AxisSignal, y: AxisSignal },
    ShortestPath { transition_cost: f64, goal_reward: f64 },
    Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    #[serde(flatten)]
    pub kind: SignalKind,
    pub noise_sigma: f64,
    /// Seed the random tables were generated from.
    pub seed: u64,
}

impl SignalSpec {
    pub fn unit(noise_sigma: f64) -> Self {
        Self { kind: SignalKind::Unit, noise_sigma, seed: 0 }
    }

    pub fn shortest_path(transition_cost: f64, goal_reward: f64, noise_sigma: f64) -> Self {
        Self {
            kind: SignalKind::ShortestPath { transition_cost, goal_reward },
            noise_sigma,
            seed: 0,
        }
    }

    pub fn composed(x: AxisSignal, y: AxisSignal, noise_sigma: f64) -> Self {
        Self { kind: SignalKind::Composed { x, y }, noise_sigma, seed: 0 }
    }

    /// Noise-free cumulant of a transition out of cell `(x, y)`.
    pub fn expected(&self, x: usize, y: usize, reached_goal: bool) -> f64 {
        match &self.kind {
            SignalKind::Composed { x: sx, y: sy } => sx.value(x) * sy.value(y),
            SignalKind::ShortestPath { transition_cost, goal_reward } => {
                transition_cost + if reached_goal { *goal_reward } else { 0.0 }
            }
            SignalKind::Unit => 1.0,
        }
    }

    /// One noisy sample of the cumulant of a transition out of `(x, y)`.
    pub fn evaluate<R: Rng + ?Sized>(&self, x: usize, y: usize, reached_goal: bool, rng: &mut R) -> f64 {
        let mean = self.expected(x, y, reached_goal);
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
            mean + normal.sample(rng)
        } else {
            mean
        }
    }

    /// Expected cumulant per state index under the ε-greedy policy; the goal
    /// (terminal) entry is zero.
    pub fn mean_field(&self, map: &GridMap, epsilon: f64) -> Result<Vec<f64>> {
        let n = map.state_count();
        let goal = map.goal_index();
        let mut out = vec![0.0; n];
        match &self.kind {
            SignalKind::ShortestPath { transition_cost, goal_reward } => {
                let p = map.transition_matrix(epsilon)?;
                for (s, v) in out.iter_mut().enumerate() {
                    if s != goal {
                        *v = transition_cost + goal_reward * p[(s, goal)];
                    }
                }
            }
            _ => {
                for (s, v) in out.iter_mut().enumerate() {
                    if s != goal {
                        let c = map.cell(s);
                        *v = self.expected(c.x, c.y, false);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Draws random signal specs for a grid of a given size.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSampler {
    pub width: usize,
    pub height: usize,
    /// Probability of drawing a standalone shortest-path signal.
    pub shortest_path_prob: f64,
    pub noise_sigma: f64,
    pub noise_on_shortest_path: bool,
}

impl SignalSampler {
    pub fn for_map(map: &GridMap) -> Self {
        Self {
            width: map.width(),
            height: map.height(),
            shortest_path_prob: 1.0 / 7.0,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            noise_on_shortest_path: true,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SignalSpec {
        let seed: u64 = rng.random();
        let mut table_rng = ChaCha8Rng::seed_from_u64(seed);
        if rng.random::<f64>() < self.shortest_path_prob {
            let sigma = if self.noise_on_shortest_path { self.noise_sigma } else { 0.0 };
            let mut spec = SignalSpec::shortest_path(
                rng.random_range(-10.0..-1.0),
                rng.random_range(1.0..10.0),
                sigma,
            );
            spec.seed = seed;
            return spec;
        }
        let x = self.sample_axis(rng, &mut table_rng, self.width);
        let y = self.sample_axis(rng, &mut table_rng, self.height);
        let kind = match (&x.primitive, &y.primitive) {
            (Primitive::Unit, Primitive::Unit) => SignalKind::Unit,
            _ => SignalKind::Composed { x, y },
        };
        SignalSpec { kind, noise_sigma: self.noise_sigma, seed }
    }

    pub fn sample_many<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<SignalSpec> {
        (0..count).map(|_| self.sample(rng)).collect()
    }

    fn sample_axis<R: Rng + ?Sized>(&self, rng: &mut R, table_rng: &mut ChaCha8Rng, len: usize) -> AxisSignal {
        let table_len = len + MAX_OFFSET;
        let primitive = match rng.random_range(0..6) {
            0 => Primitive::Fixed { value: rng.random_range(-2.0..2.0) },
            1 => Primitive::Square {
                period: rng.random_range(PERIOD_RANGE),
                invert: rng.random(),
            },
            2 => Primitive::Sin { period: rng.random_range(PERIOD_RANGE) },
            3 => Primitive::RandomBinary {
                table: (0..table_len)
                    .map(|_| if table_rng.random::<bool>() { 1.0 } else { 0.0 })
                    .collect(),
            },
            4 => Primitive::RandomFloat {
                table: (0..table_len).map(|_| table_rng.random::<f64>()).collect(),
            },
            _ => Primitive::Unit,
        };
        if primitive == Primitive::Unit {
            return AxisSignal { primitive, offset: 0, bias: 0.0 };
        }
        AxisSignal {
            primitive,
            offset: rng.random_range(0..MAX_OFFSET),
            bias: rng.random_range(-2.0..2.0),
        }
    }
}

/// Writes one JSON record per line.
pub fn write_specs<W: Write>(specs: &[SignalSpec], mut out: W) -> Result<()> {
    for spec in specs {
        let line = serde_json::to_string(spec).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_specs<R: BufRead>(input: R) -> Result<Vec<SignalSpec>> {
    let mut specs = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        specs.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse { row: k + 1, msg: e.to_string() })?,
        );
    }
    Ok(specs)
}
