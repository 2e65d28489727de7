//! Ground-truth references: closed-form SR and GVF values by linear solve,
//! every-visit Monte Carlo estimates, and weight-count scaling.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gridworld::GridMap;
use crate::gvf::SignalId;
use crate::harness::seed_tree;
use crate::signals::SignalSpec;

/// Residual tolerance of the linear solves, relative to `max(1, max|x|)`.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

fn system_matrix(p: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    if !p.is_square() {
        return Err(Error::invalid(format!("transition matrix is {}x{}", p.nrows(), p.ncols())));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
    }
    if gamma == 1.0 {
        check_absorbing(p)?;
    }
    let n = p.nrows();
    Ok(DMatrix::identity(n, n) - p * gamma)
}

/// With `γ = 1` every state must reach a terminal (all-zero) row.
fn check_absorbing(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    let terminal: Vec<bool> = (0..n).map(|i| p.row(i).iter().all(|x| *x == 0.0)).collect();
    let mut reaches = terminal.clone();
    let mut frontier: Vec<usize> = (0..n).filter(|&i| terminal[i]).collect();
    while let Some(j) = frontier.pop() {
        for i in 0..n {
            if !reaches[i] && p[(i, j)] > 0.0 {
                reaches[i] = true;
                frontier.push(i);
            }
        }
    }
    match reaches.iter().position(|r| !r) {
        None => Ok(()),
        Some(s) => Err(Error::Singular(format!(
            "gamma = 1 but state {s} cannot reach a terminal state (recurrent non-terminal class)"
        ))),
    }
}

fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("I - γP is not invertible".into()))?;
    let scale = x.amax().max(1.0);
    let residual = (a * &x - b).amax();
    if !(residual <= SOLVE_TOLERANCE * scale) {
        return Err(Error::Singular(format!("residual {residual:e} exceeds tolerance")));
    }
    Ok(x)
}

/// `Ψ = (I − γP)⁻¹`, obtained by solving `(I − γP)Ψ = I`.
pub fn analytic_sr(p: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let a = system_matrix(p, gamma)?;
    let n = p.nrows();
    solve(&a, &DMatrix::identity(n, n))
}

/// Solves `(I − γP)v = c̄` directly. Terminal states must carry `c̄ = 0`.
pub fn analytic_gvf(p: &DMatrix<f64>, gamma: f64, cbar: &[f64]) -> Result<Vec<f64>> {
    let a = system_matrix(p, gamma)?;
    if cbar.len() != p.nrows() {
        return Err(Error::DimensionMismatch { expected: p.nrows(), found: cbar.len() });
    }
    for (s, c) in cbar.iter().enumerate() {
        if *c != 0.0 && p.row(s).iter().all(|x| *x == 0.0) {
            return Err(Error::invalid(format!("terminal state {s} has non-zero cumulant {c}")));
        }
    }
    let b = DMatrix::from_column_slice(cbar.len(), 1, cbar);
    Ok(solve(&a, &b)?.column(0).iter().copied().collect())
}

/// Closed-form SR and per-signal values for one discount.
#[derive(Clone, Debug)]
pub struct AnalyticSolution {
    pub psi: DMatrix<f64>,
    pub values: BTreeMap<SignalId, Vec<f64>>,
    pub gamma: f64,
}

impl AnalyticSolution {
    pub fn compute(p: &DMatrix<f64>, gamma: f64, cbars: &[(SignalId, Vec<f64>)]) -> Result<Self> {
        let psi = analytic_sr(p, gamma)?;
        let mut values = BTreeMap::new();
        for (id, cbar) in cbars {
            values.insert(*id, analytic_gvf(p, gamma, cbar)?);
        }
        Ok(Self { psi, values, gamma })
    }

    /// Row `s` of `Ψ`.
    pub fn psi_row(&self, s: usize) -> Vec<f64> {
        self.psi.row(s).iter().copied().collect()
    }
}

/// What a Monte Carlo rollout accumulates.
#[derive(Clone, Copy, Debug)]
pub enum McTarget<'a> {
    Signal(&'a SignalSpec),
    /// Discounted state-visitation vector, current state counted.
    Successor,
}

/// Every-visit Monte Carlo means per state.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloReference {
    width: usize,
    sums: Vec<f64>,
    counts: Vec<u64>,
    pub episodes_used: u64,
    pub episodes_truncated: u64,
}

impl MonteCarloReference {
    pub fn empty(states: usize, width: usize) -> Self {
        Self {
            width,
            sums: vec![0.0; states * width],
            counts: vec![0; states],
            episodes_used: 0,
            episodes_truncated: 0,
        }
    }

    pub fn state_count(&self) -> usize {
        self.counts.len()
    }

    pub fn visits(&self, state: usize) -> u64 {
        self.counts[state]
    }

    /// Mean return vector at `state`, `None` if never visited.
    pub fn estimate(&self, state: usize) -> Option<Vec<f64>> {
        let n = self.counts[state];
        (n > 0).then(|| {
            self.sums[state * self.width..(state + 1) * self.width]
                .iter()
                .map(|s| s / n as f64)
                .collect()
        })
    }

    /// Scalar mean for signal targets.
    pub fn value(&self, state: usize) -> Option<f64> {
        self.estimate(state).map(|v| v[0])
    }

    /// Count-weighted merge of two shards.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.width != self.width || other.counts.len() != self.counts.len() {
            return Err(Error::invalid("cannot merge Monte Carlo references of different shapes"));
        }
        self.sums.iter_mut().zip(&other.sums).for_each(|(a, b)| *a += b);
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.episodes_used += other.episodes_used;
        self.episodes_truncated += other.episodes_truncated;
        Ok(())
    }
}

/// Rolls `episodes` episodes from the start state under ε-greedy and
/// averages every-visit discounted returns. Truncated episodes are dropped.
pub fn mc_reference<R: Rng + ?Sized>(
    map: &GridMap,
    epsilon: f64,
    target: McTarget<'_>,
    gamma: f64,
    episodes: u64,
    step_cap: u64,
    rng: &mut R,
) -> Result<MonteCarloReference> {
    if episodes == 0 {
        return Err(Error::invalid("episodes must be positive"));
    }
    let n = map.state_count();
    let width = match target {
        McTarget::Signal(_) => 1,
        McTarget::Successor => n,
    };
    let mut out = MonteCarloReference::empty(n, width);
    let mut states = Vec::new();
    let mut cumulants = Vec::new();
    let mut acc = vec![0.0; width];
    for _ in 0..episodes {
        states.clear();
        cumulants.clear();
        states.push(map.start_index());
        let mut state = map.initial_state();
        let mut truncated = true;
        while state.episode_step < step_cap {
            let a = map.select_action(state, epsilon, rng);
            let (next, terminal) = map.step(state, a);
            if let McTarget::Signal(spec) = target {
                cumulants.push(spec.evaluate(state.position.x, state.position.y, terminal, rng));
            }
            states.push(map.state_index(next.position).expect("open"));
            state = next;
            if terminal {
                truncated = false;
                break;
            }
        }
        if truncated {
            out.episodes_truncated += 1;
            continue;
        }
        out.episodes_used += 1;
        acc.iter_mut().for_each(|x| *x = 0.0);
        // Terminal state: return 0 for signals, its own indicator for the SR.
        for k in (0..states.len()).rev() {
            let s = states[k];
            match target {
                McTarget::Signal(_) => {
                    if k + 1 < states.len() {
                        acc[0] = cumulants[k] + gamma * acc[0];
                    }
                }
                McTarget::Successor => {
                    acc.iter_mut().for_each(|x| *x *= gamma);
                    acc[s] += 1.0;
                }
            }
            out.counts[s] += 1;
            out.sums[s * width..(s + 1) * width]
                .iter_mut()
                .zip(&acc)
                .for_each(|(a, b)| *a += b);
        }
    }
    Ok(out)
}

/// [`mc_reference`] split into `shards` independent streams seeded from
/// `seed`, run in parallel and merged in shard order.
#[allow(clippy::too_many_arguments)]
pub fn mc_reference_sharded(
    map: &GridMap,
    epsilon: f64,
    target: McTarget<'_>,
    gamma: f64,
    episodes: u64,
    step_cap: u64,
    seed: u64,
    shards: usize,
) -> Result<MonteCarloReference> {
    let shards = shards.max(1) as u64;
    let parts: Vec<Result<MonteCarloReference>> = (0..shards)
        .into_par_iter()
        .map(|k| {
            let count = episodes / shards + u64::from(k < episodes % shards);
            let mut rng = ChaCha8Rng::seed_from_u64(seed_tree(seed, k, "mc-shard"));
            if count == 0 {
                let width = match target {
                    McTarget::Signal(_) => 1,
                    McTarget::Successor => map.state_count(),
                };
                return Ok(MonteCarloReference::empty(map.state_count(), width));
            }
            mc_reference(map, epsilon, target, gamma, count, step_cap, &mut rng)
        })
        .collect();
    let mut parts = parts.into_iter();
    let mut merged = parts.next().expect("at least one shard")?;
    for p in parts {
        merged.merge(&p?)?;
    }
    Ok(merged)
}

/// Weight counts for `f` discounts and `h` one-step predictors over `S`
/// tabular states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingCounts {
    /// `f·h·S`
    pub direct: u64,
    /// `f·S² + h·S`
    pub sr: u64,
    /// `h* = f·S/(f − 1)`; direct uses more weights for `h > h*`.
    pub crossover_h: f64,
}

pub fn scaling_weights(f: u64, h: u64, states: u64) -> Result<ScalingCounts> {
    if f == 0 || h == 0 || states == 0 {
        return Err(Error::invalid("f, h and |S| must all be at least 1"));
    }
    let crossover_h = if f == 1 {
        f64::INFINITY
    } else {
        (f * states) as f64 / (f - 1) as f64
    };
    Ok(ScalingCounts {
        direct: f * h * states,
        sr: f * states * states + h * states,
        crossover_h,
    })
}

/// Metadata line of a reference CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceHeader {
    pub map_hash: String,
    pub gamma: f64,
    pub epsilon: f64,
    /// 0 for analytic references.
    pub episodes: u64,
    pub seed: u64,
}

/// Per-state reference values as written to and read from CSV:
/// a `# map_hash=..,gamma=..,epsilon=..,episodes=..,seed=..` line, then
/// `state,x,y,visits,<value columns>`. Unvisited states have empty values.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTable {
    pub header: ReferenceHeader,
    pub columns: Vec<String>,
    pub rows: Vec<ReferenceRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceRow {
    pub state: usize,
    pub x: usize,
    pub y: usize,
    pub visits: u64,
    pub values: Option<Vec<f64>>,
}

impl ReferenceTable {
    pub fn from_analytic(map: &GridMap, header: ReferenceHeader, columns: Vec<String>, per_state: impl Fn(usize) -> Vec<f64>) -> Self {
        let rows = (0..map.state_count())
            .map(|s| {
                let c = map.cell(s);
                ReferenceRow { state: s, x: c.x, y: c.y, visits: 0, values: Some(per_state(s)) }
            })
            .collect();
        Self { header, columns, rows }
    }

    pub fn from_monte_carlo(map: &GridMap, header: ReferenceHeader, columns: Vec<String>, mc: &MonteCarloReference) -> Self {
        let rows = (0..map.state_count())
            .map(|s| {
                let c = map.cell(s);
                ReferenceRow { state: s, x: c.x, y: c.y, visits: mc.visits(s), values: mc.estimate(s) }
            })
            .collect();
        Self { header, columns, rows }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let h = &self.header;
        writeln!(
            out,
            "# map_hash={},gamma={},epsilon={},episodes={},seed={}",
            h.map_hash, h.gamma, h.epsilon, h.episodes, h.seed
        )?;
        writeln!(out, "state,x,y,visits,{}", self.columns.join(","))?;
        for r in &self.rows {
            let vals = match &r.values {
                Some(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                None => vec![""; self.columns.len()].join(","),
            };
            writeln!(out, "{},{},{},{},{}", r.state, r.x, r.y, r.visits, vals)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| Error::Parse { row: 1, msg: "empty file".into() })??;
        let meta: BTreeMap<String, String> = first
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse { row: 1, msg: "missing header".into() })?
            .split(',')
            .filter_map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect();
        let get = |k: &str| meta.get(k).ok_or_else(|| Error::Parse { row: 1, msg: format!("missing {k}") });
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse { row: 1, msg: format!("bad {k}") })
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Parse { row: 1, msg: format!("bad {k}") })
        };
        let header = ReferenceHeader {
            map_hash: get("map_hash")?.clone(),
            gamma: num("gamma")?,
            epsilon: num("epsilon")?,
            episodes: int("episodes")?,
            seed: int("seed")?,
        };
        let cols = lines.next().ok_or_else(|| Error::Parse { row: 2, msg: "missing column header".into() })??;
        let columns: Vec<String> = cols.split(',').skip(4).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let row = k + 3;
            let line = line?;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 + columns.len() {
                return Err(Error::Parse { row, msg: "wrong number of cells".into() });
            }
            let int = |s: &str| s.parse::<u64>().map_err(|_| Error::Parse { row, msg: format!("bad integer {s:?}") });
            let values = if cells[4..].iter().all(|c| c.is_empty()) {
                None
            } else {
                Some(
                    cells[4..]
                        .iter()
                        .map(|c| c.parse::<f64>().map_err(|_| Error::Parse { row, msg: format!("bad value {c:?}") }))
                        .collect::<Result<Vec<_>>>()?,
                )
            };
            rows.push(ReferenceRow {
                state: int(cells[0])? as usize,
                x: int(cells[1])? as usize,
                y: int(cells[2])? as usize,
                visits: int(cells[3])?,
                values,
            });
        }
        Ok(Self { header, columns, rows })
    }
}

/// `Ψ·c̄`, the SR-composed value vector.
pub fn apply_sr(psi: &DMatrix<f64>, cbar: &[f64]) -> Vec<f64> {
    (psi * DVector::from_column_slice(cbar)).iter().copied().collect()
}
