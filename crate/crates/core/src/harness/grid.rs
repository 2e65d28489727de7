//! Grid-world studies: the SR step-size sweep, the predictor α×γ sweep and
//! incremental-activation learning curves.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ReferenceKind};
use super::seed_tree;
use crate::error::{Error, Result};
use crate::features::{encode_one_hot, FeatureVector};
use crate::gridworld::{Cell, GridMap};
use crate::gvf::{PredictorSlot, Registry, SlotPrediction, StepSize, Transition};
use crate::metrics::{grid_nmse, mean_ci95, Method, MseEntry};
use crate::oracle::{analytic_gvf, analytic_sr, mc_reference_sharded, McTarget};
use crate::signals::SignalSpec;
use crate::srlearn::{Discount, SuccessorMatrix};

/// Map, policy and signals shared by every cell of a study.
#[derive(Clone, Debug)]
pub struct GridSetup {
    pub map: GridMap,
    pub epsilon: f64,
    pub signals: Vec<SignalSpec>,
    features: Vec<FeatureVector>,
    cells: Vec<Cell>,
}

impl GridSetup {
    /// Loads the map and draws the configured number of signals from the
    /// `signals` stream of the master seed.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let map = cfg.load_map()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_tree(cfg.seed, 0, "signals"));
        let signals = cfg.sampler(&map).sample_many(&mut rng, cfg.signals);
        Self::new(map, cfg.epsilon, signals)
    }

    pub fn new(map: GridMap, epsilon: f64, signals: Vec<SignalSpec>) -> Result<Self> {
        let n = map.state_count();
        let features = (0..n).map(|s| encode_one_hot(s, n)).collect::<Result<_>>()?;
        let cells = (0..n).map(|s| map.cell(s)).collect();
        Ok(Self { map, epsilon, signals, features, cells })
    }

    pub fn state_count(&self) -> usize {
        self.map.state_count()
    }
}

/// Reference SR rows and signal values for one discount. Entries are NaN
/// where a Monte Carlo reference never visited the state; errors skip them.
#[derive(Clone, Debug)]
pub struct GridReference {
    pub gamma: f64,
    /// Row-major `S × S`.
    pub psi: Vec<f64>,
    /// `values[signal][state]`.
    pub values: Vec<Vec<f64>>,
}

impl GridReference {
    pub fn analytic(setup: &GridSetup, gamma: f64) -> Result<Self> {
        let p = setup.map.transition_matrix(setup.epsilon)?;
        let psi = analytic_sr(&p, gamma)?;
        let n = setup.state_count();
        let psi = (0..n * n).map(|k| psi[(k / n, k % n)]).collect();
        let values = setup
            .signals
            .iter()
            .map(|spec| analytic_gvf(&p, gamma, &spec.mean_field(&setup.map, setup.epsilon)?))
            .collect::<Result<_>>()?;
        Ok(Self { gamma, psi, values })
    }

    pub fn monte_carlo(setup: &GridSetup, gamma: f64, cfg: &ExperimentConfig) -> Result<Self> {
        let n = setup.state_count();
        let shards = rayon::current_num_threads();
        let sr = mc_reference_sharded(
            &setup.map,
            setup.epsilon,
            McTarget::Successor,
            gamma,
            cfg.mc_sr_episodes,
            cfg.step_cap,
            seed_tree(cfg.seed, gamma.to_bits(), "mc-sr"),
            shards,
        )?;
        let mut psi = vec![f64::NAN; n * n];
        for s in 0..n {
            if let Some(row) = sr.estimate(s) {
                psi[s * n..(s + 1) * n].copy_from_slice(&row);
            }
        }
        let values = setup
            .signals
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let mc = mc_reference_sharded(
                    &setup.map,
                    setup.epsilon,
                    McTarget::Signal(spec),
                    gamma,
                    cfg.mc_signal_episodes,
                    cfg.step_cap,
                    seed_tree(cfg.seed, gamma.to_bits() ^ i as u64, "mc-signal"),
                    shards,
                )?;
                Ok((0..n).map(|s| mc.value(s).unwrap_or(f64::NAN)).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self { gamma, psi, values })
    }

    pub fn for_config(setup: &GridSetup, gamma: f64, cfg: &ExperimentConfig) -> Result<Self> {
        match cfg.reference {
            ReferenceKind::Analytic => Self::analytic(setup, gamma),
            ReferenceKind::MonteCarlo => Self::monte_carlo(setup, gamma, cfg),
        }
    }
}

/// Settings of one learning run.
#[derive(Clone, Debug)]
pub struct TrialParams {
    pub gamma: f64,
    pub sr_alpha: f64,
    pub alpha_direct: f64,
    pub alpha_cumulant: f64,
    pub master_seed: u64,
    pub trial: u64,
    pub episodes: u64,
    pub activation_interval: u64,
    /// Signal ids in activation order; empty for SR-only runs.
    pub order: Vec<usize>,
    pub step_cap: u64,
    /// Keep per-episode error sums.
    pub curves: bool,
}

#[derive(Clone, Debug, Default)]
pub struct TrialOutcome {
    /// Summed squared SR-row error over the run.
    pub sr_error_total: f64,
    /// Per-episode SR error, when curves were requested.
    pub sr_error: Vec<f64>,
    /// Per-signal MSE (mean of per-episode sums over active episodes);
    /// NaN for signals never activated.
    pub mse_direct: Vec<f64>,
    pub mse_sr: Vec<f64>,
    /// `[signal][episode]` within-episode error sums, when requested.
    pub episode_direct: Vec<Vec<f64>>,
    pub episode_sr: Vec<Vec<f64>>,
    pub truncated_episodes: u64,
    pub diverged: Option<String>,
}

/// Trial-specific activation order: a seeded shuffle, or the identity.
pub fn signal_order(signals: usize, master_seed: u64, trial: u64, randomize: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..signals).collect();
    if randomize {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed_tree(master_seed, trial, "order")));
    }
    order
}

/// One run of the incremental protocol. Predictions are scored at each
/// visited state before the update on the transition out of it. Divergence
/// stops the run and is reported in the outcome.
pub fn run_trial(setup: &GridSetup, reference: &GridReference, p: &TrialParams) -> Result<TrialOutcome> {
    let n = setup.state_count();
    let m = setup.signals.len();
    let sr = SuccessorMatrix::new(n, Discount::constant(p.gamma)?, p.sr_alpha)?;
    let slots = p
        .order
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            if id >= m {
                return Err(Error::IndexOutOfRange { index: id, dim: m });
            }
            Ok(PredictorSlot::new(
                id,
                n,
                k as u64 * p.activation_interval,
                StepSize::Constant(p.alpha_cumulant),
                StepSize::Constant(p.alpha_direct),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut registry = Registry::new(sr, slots)?;
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed_tree(p.master_seed, p.trial, "env"));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed_tree(p.master_seed, p.trial, "noise"));

    let mut out = TrialOutcome {
        mse_direct: vec![f64::NAN; m],
        mse_sr: vec![f64::NAN; m],
        ..Default::default()
    };
    if p.curves {
        out.episode_direct = vec![vec![0.0; p.episodes as usize]; m];
        out.episode_sr = vec![vec![0.0; p.episodes as usize]; m];
        out.sr_error = vec![0.0; p.episodes as usize];
    }
    let mut totals = vec![(0.0f64, 0.0f64, 0u64); m];
    let mut ep_d = vec![0.0; m];
    let mut ep_s = vec![0.0; m];
    let mut cumulants = vec![0.0; m];
    let mut preds: Vec<SlotPrediction> = Vec::new();

    for e in 0..p.episodes {
        registry.activate(e);
        ep_d.iter_mut().for_each(|x| *x = 0.0);
        ep_s.iter_mut().for_each(|x| *x = 0.0);
        let mut ep_sr_err = 0.0;
        let result = setup.map.rollout(setup.epsilon, p.step_cap, &mut env_rng, |rec| {
            let s = rec.state;
            let row = registry.sr().row(s);
            let target = &reference.psi[s * n..(s + 1) * n];
            if !target[0].is_nan() {
                ep_sr_err += row.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            registry.predict(&setup.features[s], &mut preds)?;
            for pr in &preds {
                let v = reference.values[pr.signal_id][s];
                if v.is_finite() {
                    ep_d[pr.signal_id] += (pr.direct - v) * (pr.direct - v);
                    ep_s[pr.signal_id] += (pr.sr - v) * (pr.sr - v);
                }
            }
            let c = setup.cells[s];
            for (slot, spec) in cumulants.iter_mut().zip(&setup.signals) {
                *slot = spec.evaluate(c.x, c.y, rec.terminal, &mut noise_rng);
            }
            let tr = Transition {
                phi_s: &setup.features[s],
                phi_next: &setup.features[rec.next],
                gamma_next: p.gamma,
                terminal: rec.terminal,
                cumulants: &cumulants,
            };
            registry.step(&tr, e)?;
            Ok(())
        });
        match result {
            Ok(o) => out.truncated_episodes += u64::from(o.truncated),
            Err(Error::Diverged { learner, time }) => {
                out.diverged = Some(format!("{learner} diverged in episode {time}"));
                break;
            }
            Err(err) => return Err(err),
        }
        out.sr_error_total += ep_sr_err;
        if p.curves {
            out.sr_error[e as usize] = ep_sr_err;
        }
        for slot in registry.slots().iter().filter(|s| s.is_active()) {
            let id = slot.signal_id;
            let t = &mut totals[id];
            t.0 += ep_d[id];
            t.1 += ep_s[id];
            t.2 += 1;
            if p.curves {
                out.episode_direct[id][e as usize] = ep_d[id];
                out.episode_sr[id][e as usize] = ep_s[id];
            }
        }
    }
    for (id, (d, s, count)) in totals.into_iter().enumerate() {
        if count > 0 {
            out.mse_direct[id] = d / count as f64;
            out.mse_sr[id] = s / count as f64;
        }
    }
    if out.diverged.is_some() {
        out.mse_direct.iter_mut().for_each(|x| *x = f64::NAN);
        out.mse_sr.iter_mut().for_each(|x| *x = f64::NAN);
    }
    Ok(out)
}

fn references(setup: &GridSetup, cfg: &ExperimentConfig, gammas: &[f64]) -> Result<Vec<GridReference>> {
    gammas.iter().map(|&g| GridReference::for_config(setup, g, cfg)).collect()
}

/// Index of the smallest mean; ties and NaNs resolve toward the earlier
/// (smaller) step-size.
fn argmin_by_alpha(alphas: &[f64], means: &[f64]) -> usize {
    let mut idx: Vec<usize> = (0..alphas.len()).collect();
    idx.sort_by(|&a, &b| alphas[a].total_cmp(&alphas[b]));
    let mut best = idx[0];
    for &i in &idx[1..] {
        if means[i] < means[best] || (means[best].is_nan() && !means[i].is_nan()) {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrCell {
    pub gamma: f64,
    pub alpha: f64,
    /// Summed SR error of each trial.
    pub per_trial: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrSweep {
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub cells: Vec<SrCell>,
}

impl SrSweep {
    pub fn cell(&self, gamma: f64, alpha: f64) -> Option<&SrCell> {
        self.cells.iter().find(|c| c.gamma == gamma && c.alpha == alpha)
    }

    /// Argmin of trial-mean error, ties to the smaller α.
    pub fn best_alpha(&self, gamma: f64) -> Option<f64> {
        let cells: Vec<&SrCell> = self.cells.iter().filter(|c| c.gamma == gamma).collect();
        if cells.is_empty() {
            return None;
        }
        let alphas: Vec<f64> = cells.iter().map(|c| c.alpha).collect();
        let means: Vec<f64> = cells.iter().map(|c| c.mean).collect();
        Some(alphas[argmin_by_alpha(&alphas, &means)])
    }
}

/// SR-only learning for every `(γ, α_SR)` pair over `sr_episodes` episodes.
pub fn run_sr_sweep(cfg: &ExperimentConfig) -> Result<SrSweep> {
    cfg.validate()?;
    let setup = GridSetup::new(cfg.load_map()?, cfg.epsilon, Vec::new())?;
    let refs = references(&setup, cfg, &cfg.gammas)?;
    let jobs: Vec<(usize, f64, u64)> = (0..cfg.gammas.len())
        .flat_map(|g| cfg.sr_alphas.iter().flat_map(move |&a| (0..cfg.trials as u64).map(move |t| (g, a, t))))
        .collect();
    let totals: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, alpha, trial)| {
            let p = TrialParams {
                gamma: cfg.gammas[g],
                sr_alpha: alpha,
                alpha_direct: 0.0,
                alpha_cumulant: 0.0,
                master_seed: cfg.seed,
                trial,
                episodes: cfg.sr_episodes,
                activation_interval: cfg.activation_interval,
                order: Vec::new(),
                step_cap: cfg.step_cap,
                curves: false,
            };
            let o = run_trial(&setup, &refs[g], &p)?;
            Ok(if o.diverged.is_some() { f64::NAN } else { o.sr_error_total })
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (chunk, (g, a, _)) in totals.chunks(cfg.trials).zip(jobs.iter().step_by(cfg.trials)) {
        let (mean, ci95) = mean_ci95(chunk);
        cells.push(SrCell { gamma: cfg.gammas[*g], alpha: *a, per_trial: chunk.to_vec(), mean, ci95 });
    }
    Ok(SrSweep { gammas: cfg.gammas.clone(), alphas: cfg.sr_alphas.clone(), cells })
}

/// SR step-size per configured γ: fixed by the config, or the SR sweep's best.
pub fn resolve_sr_alphas(cfg: &ExperimentConfig) -> Result<(Vec<f64>, Option<SrSweep>)> {
    if let Some(v) = &cfg.sr_alpha_per_gamma {
        return Ok((v.clone(), None));
    }
    let sweep = run_sr_sweep(cfg)?;
    let best = cfg.gammas.iter().map(|&g| sweep.best_alpha(g).expect("swept")).collect();
    Ok((best, Some(sweep)))
}

/// One `(γ, α, trial)` cell of the predictor sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorCell {
    pub gamma: f64,
    pub alpha: f64,
    pub trial: u64,
    pub mse_direct: Vec<f64>,
    pub mse_sr: Vec<f64>,
    pub nmse_direct: Vec<f64>,
    pub nmse_sr: Vec<f64>,
    pub truncated_episodes: u64,
    pub diverged: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorSweep {
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub sr_alphas: Vec<f64>,
    pub signals: usize,
    pub trials: usize,
    pub cells: Vec<PredictorCell>,
}

/// Summed-NMSE statistics of one `(γ, α, method)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummedNmse {
    pub mean: f64,
    pub ci95: f64,
}

impl PredictorSweep {
    fn cells_at(&self, gamma: f64, alpha: f64) -> impl Iterator<Item = &PredictorCell> {
        self.cells.iter().filter(move |c| c.gamma == gamma && c.alpha == alpha)
    }

    /// Per-trial NMSE summed over signals, then trial mean ± CI.
    pub fn summed_nmse(&self, gamma: f64, alpha: f64, method: Method) -> SummedNmse {
        let sums: Vec<f64> = self
            .cells_at(gamma, alpha)
            .map(|c| match method {
                Method::Direct => c.nmse_direct.iter().sum(),
                Method::Sr => c.nmse_sr.iter().sum(),
            })
            .collect();
        let (mean, ci95) = mean_ci95(&sums);
        SummedNmse { mean, ci95 }
    }

    /// Trial-mean `(mse, nmse)` of one signal.
    pub fn signal_mean(&self, gamma: f64, alpha: f64, signal: usize, method: Method) -> (f64, f64) {
        let cells: Vec<&PredictorCell> = self.cells_at(gamma, alpha).collect();
        let k = cells.len().max(1) as f64;
        let pick = |c: &PredictorCell| match method {
            Method::Direct => (c.mse_direct[signal], c.nmse_direct[signal]),
            Method::Sr => (c.mse_sr[signal], c.nmse_sr[signal]),
        };
        let (m, n) = cells.iter().map(|c| pick(c)).fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        (m / k, n / k)
    }

    /// `(direct better, SR-based better)` by trial-mean NMSE; the SR-based
    /// method must be strictly lower to win.
    pub fn win_counts(&self, gamma: f64, alpha: f64) -> (usize, usize) {
        let sr_wins = (0..self.signals)
            .filter(|&i| {
                self.signal_mean(gamma, alpha, i, Method::Sr).1 < self.signal_mean(gamma, alpha, i, Method::Direct).1
            })
            .count();
        (self.signals - sr_wins, sr_wins)
    }

    pub fn best_alpha(&self, gamma: f64, method: Method) -> f64 {
        let means: Vec<f64> = self.alphas.iter().map(|&a| self.summed_nmse(gamma, a, method).mean).collect();
        self.alphas[argmin_by_alpha(&self.alphas, &means)]
    }

    /// Direct minus SR-based summed NMSE, each at its own best α.
    pub fn best_alpha_gap(&self, gamma: f64) -> f64 {
        let d = self.summed_nmse(gamma, self.best_alpha(gamma, Method::Direct), Method::Direct).mean;
        let s = self.summed_nmse(gamma, self.best_alpha(gamma, Method::Sr), Method::Sr).mean;
        d - s
    }

    pub fn diverged_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.diverged.is_some()).count()
    }
}

/// Both methods over every `(γ, α)` with the incremental protocol; the SR
/// step-size per γ comes from `sr_alphas`.
pub fn run_predictor_sweep_with(cfg: &ExperimentConfig, sr_alphas: &[f64]) -> Result<PredictorSweep> {
    cfg.validate()?;
    if sr_alphas.len() != cfg.gammas.len() {
        return Err(Error::Config("need one SR step-size per gamma".into()));
    }
    let setup = GridSetup::from_config(cfg)?;
    let refs = references(&setup, cfg, &cfg.gammas)?;
    let trials = cfg.trials as u64;
    let jobs: Vec<(usize, f64, u64)> = (0..cfg.gammas.len())
        .flat_map(|g| cfg.alphas.iter().flat_map(move |&a| (0..trials).map(move |t| (g, a, t))))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(g, alpha, trial)| {
            let p = TrialParams {
                gamma: cfg.gammas[g],
                sr_alpha: sr_alphas[g],
                alpha_direct: alpha,
                alpha_cumulant: alpha,
                master_seed: cfg.seed,
                trial,
                episodes: cfg.episodes,
                activation_interval: cfg.activation_interval,
                order: signal_order(cfg.signals, cfg.seed, trial, cfg.randomize_order),
                step_cap: cfg.step_cap,
                curves: false,
            };
            run_trial(&setup, &refs[g], &p)
        })
        .collect::<Result<_>>()?;

    let mut cells: Vec<PredictorCell> = jobs
        .iter()
        .zip(outcomes)
        .map(|(&(g, alpha, trial), o)| PredictorCell {
            gamma: cfg.gammas[g],
            alpha,
            trial,
            nmse_direct: vec![f64::NAN; cfg.signals],
            nmse_sr: vec![f64::NAN; cfg.signals],
            mse_direct: o.mse_direct,
            mse_sr: o.mse_sr,
            truncated_episodes: o.truncated_episodes,
            diverged: o.diverged,
        })
        .collect();

    for &gamma in &cfg.gammas {
        for trial in 0..trials {
            let idx: Vec<usize> =
                (0..cells.len()).filter(|&i| cells[i].gamma == gamma && cells[i].trial == trial).collect();
            let mut table = Vec::new();
            for &i in &idx {
                for s in 0..cfg.signals {
                    if cells[i].mse_direct[s].is_nan() && cells[i].diverged.is_none() {
                        continue;
                    }
                    for (method, mse) in [(Method::Direct, cells[i].mse_direct[s]), (Method::Sr, cells[i].mse_sr[s])] {
                        table.push(MseEntry { signal_id: s, method, alpha: cells[i].alpha, mse });
                    }
                }
            }
            if table.is_empty() {
                continue;
            }
            for e in grid_nmse(&table)? {
                let i = *idx.iter().find(|&&i| cells[i].alpha == e.alpha).expect("alpha present");
                let cell = &mut cells[i];
                match e.method {
                    Method::Direct => cell.nmse_direct[e.signal_id] = e.nmse,
                    Method::Sr => cell.nmse_sr[e.signal_id] = e.nmse,
                }
            }
        }
    }
    Ok(PredictorSweep {
        gammas: cfg.gammas.clone(),
        alphas: cfg.alphas.clone(),
        sr_alphas: sr_alphas.to_vec(),
        signals: cfg.signals,
        trials: cfg.trials,
        cells,
    })
}

pub fn run_predictor_sweep(cfg: &ExperimentConfig) -> Result<(PredictorSweep, Option<SrSweep>)> {
    let (sr_alphas, sr_sweep) = resolve_sr_alphas(cfg)?;
    Ok((run_predictor_sweep_with(cfg, &sr_alphas)?, sr_sweep))
}

/// Trial-averaged learning curves with a fixed activation order.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementalCurves {
    pub gamma: f64,
    pub sr_alpha: f64,
    pub alpha_direct: f64,
    pub alpha_cumulant: f64,
    pub episodes: u64,
    pub trials: usize,
    /// Signal ids in activation order.
    pub order: Vec<usize>,
    /// Activation episode of each signal id.
    pub activation: Vec<u64>,
    /// Trial-mean per-episode error sums, `[signal][episode]`.
    pub direct: Vec<Vec<f64>>,
    pub sr: Vec<Vec<f64>>,
    /// Per-signal normalizer: max over episodes and both methods.
    pub normalizer: Vec<f64>,
    pub summed_direct: Vec<SummedNmse>,
    pub summed_sr: Vec<SummedNmse>,
    pub sr_error: Vec<SummedNmse>,
}

impl IncrementalCurves {
    pub fn nmse(&self, signal: usize, method: Method, episode: usize) -> f64 {
        let v = match method {
            Method::Direct => self.direct[signal][episode],
            Method::Sr => self.sr[signal][episode],
        };
        let m = self.normalizer[signal];
        if m > 0.0 {
            v / m
        } else {
            0.0
        }
    }

    /// Largest trial-mean per-episode error of a signal after activation.
    pub fn peak(&self, signal: usize, method: Method) -> f64 {
        let from = self.activation[signal] as usize;
        (from..self.episodes as usize)
            .map(|e| self.nmse(signal, method, e))
            .fold(0.0, f64::max)
    }

    pub fn active_at(&self, episode: u64) -> usize {
        self.activation.iter().filter(|&&a| a <= episode).count()
    }
}

/// Step-sizes for the learning-curve study: `(SR, direct, cumulant)`.
pub fn resolve_incremental_alphas(cfg: &ExperimentConfig) -> Result<(f64, f64, f64)> {
    let gamma = cfg.incremental_gamma;
    let sub = ExperimentConfig { gammas: vec![gamma], ..cfg.clone() };
    let sr_alpha = match cfg.gammas.iter().position(|&g| g == gamma).zip(cfg.sr_alpha_per_gamma.as_ref()) {
        Some((i, v)) => v[i],
        None => {
            let sub = ExperimentConfig { sr_alpha_per_gamma: None, ..sub.clone() };
            resolve_sr_alphas(&sub)?.0[0]
        }
    };
    let (direct, cumulant) = match (cfg.incremental_alpha_direct, cfg.incremental_alpha_sr) {
        (Some(d), Some(c)) => (d, c),
        (d, c) => {
            let sweep = run_predictor_sweep_with(&sub, &[sr_alpha])?;
            (
                d.unwrap_or_else(|| sweep.best_alpha(gamma, Method::Direct)),
                c.unwrap_or_else(|| sweep.best_alpha(gamma, Method::Sr)),
            )
        }
    };
    Ok((sr_alpha, direct, cumulant))
}

pub fn run_incremental_curves(cfg: &ExperimentConfig) -> Result<IncrementalCurves> {
    cfg.validate()?;
    let (sr_alpha, alpha_direct, alpha_cumulant) = resolve_incremental_alphas(cfg)?;
    run_incremental_curves_with(cfg, sr_alpha, alpha_direct, alpha_cumulant)
}

/// Learning curves at `incremental_gamma`; divergence is an error here.
pub fn run_incremental_curves_with(
    cfg: &ExperimentConfig,
    sr_alpha: f64,
    alpha_direct: f64,
    alpha_cumulant: f64,
) -> Result<IncrementalCurves> {
    cfg.validate()?;
    let setup = GridSetup::from_config(cfg)?;
    let gamma = cfg.incremental_gamma;
    let reference = GridReference::for_config(&setup, gamma, cfg)?;
    let order = signal_order(cfg.signals, cfg.seed, 0, false);
    let outcomes: Vec<TrialOutcome> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let p = TrialParams {
                gamma,
                sr_alpha,
                alpha_direct,
                alpha_cumulant,
                master_seed: cfg.seed,
                trial,
                episodes: cfg.episodes,
                activation_interval: cfg.activation_interval,
                order: order.clone(),
                step_cap: cfg.step_cap,
                curves: true,
            };
            let o = run_trial(&setup, &reference, &p)?;
            match &o.diverged {
                Some(msg) => Err(Error::Diverged { learner: format!("trial {trial}: {msg}"), time: 0 }),
                None => Ok(o),
            }
        })
        .collect::<Result<_>>()?;

    let m = cfg.signals;
    let eps = cfg.episodes as usize;
    let k = outcomes.len() as f64;
    let mean_of = |pick: &dyn Fn(&TrialOutcome) -> &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..m)
            .map(|i| (0..eps).map(|e| outcomes.iter().map(|o| pick(o)[i][e]).sum::<f64>() / k).collect())
            .collect()
    };
    let direct = mean_of(&|o| &o.episode_direct);
    let sr = mean_of(&|o| &o.episode_sr);
    let normalizer: Vec<f64> = (0..m)
        .map(|i| direct[i].iter().chain(&sr[i]).copied().fold(0.0, f64::max))
        .collect();
    let mut activation = vec![0; m];
    for (k, &id) in order.iter().enumerate() {
        activation[id] = k as u64 * cfg.activation_interval;
    }
    let summed = |pick: &dyn Fn(&TrialOutcome) -> &Vec<Vec<f64>>| -> Vec<SummedNmse> {
        (0..eps)
            .map(|e| {
                let per_trial: Vec<f64> = outcomes
                    .iter()
                    .map(|o| {
                        (0..m)
                            .filter(|&i| normalizer[i] > 0.0)
                            .map(|i| pick(o)[i][e] / normalizer[i])
                            .sum()
                    })
                    .collect();
                let (mean, ci95) = mean_ci95(&per_trial);
                SummedNmse { mean, ci95 }
            })
            .collect()
    };
    let summed_direct = summed(&|o| &o.episode_direct);
    let summed_sr = summed(&|o| &o.episode_sr);
    let sr_error = (0..eps)
        .map(|e| {
            let v: Vec<f64> = outcomes.iter().map(|o| o.sr_error[e]).collect();
            let (mean, ci95) = mean_ci95(&v);
            SummedNmse { mean, ci95 }
        })
        .collect();
    Ok(IncrementalCurves {
        gamma,
        sr_alpha,
        alpha_direct,
        alpha_cumulant,
        episodes: cfg.episodes,
        trials: cfg.trials,
        order,
        activation,
        direct,
        sr,
        normalizer,
        summed_direct,
        summed_sr,
        sr_error,
    })
}
