//! Per-signal learners and the registry that activates them over a run.
//!
//! Every slot learns two estimates of the same GVF from the same samples:
//! a one-step cumulant estimate `c̄(φ) = φᵀw` composed with the shared
//! successor matrix (`φᵀMw`), and a direct TD(0) estimate `φᵀv`.

use std::io::{BufRead, Write};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::replay::StepSizeSchedule;
use crate::srlearn::{SuccessorMatrix, DIVERGENCE_LIMIT};

/// Dense identifier of a cumulant signal.
pub type SignalId = usize;

/// Step-size rule for a learner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSize {
    Constant(f64),
    /// Linearly decaying schedule, offset to the learner's activation time and
    /// divided by the number of active features.
    Decaying(StepSizeSchedule),
}

impl StepSize {
    pub fn at(&self, time: u64, activation_time: u64, active_features: usize) -> f64 {
        match self {
            StepSize::Constant(a) => *a,
            StepSize::Decaying(s) => s
                .with_offset(activation_time)
                .alpha(time, active_features.max(1)),
        }
    }
}

/// One-step cumulant estimator `c̄(φ) = φᵀw`.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulantWeights {
    w: Vec<f64>,
    diverged: bool,
}

impl CumulantWeights {
    pub fn new(dim: usize) -> Self {
        Self {
            w: vec![0.0; dim],
            diverged: false,
        }
    }

    pub fn from_weights(w: Vec<f64>) -> Self {
        Self { w, diverged: false }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn is_diverged(&self) -> bool {
        self.diverged
    }

    pub fn predict(&self, phi: &FeatureVector) -> Result<f64> {
        phi.dot(&self.w)
    }

    /// `δ = c − φᵀw`, `w ← w + αφδ`. Returns `δ`.
    pub fn update(&mut self, phi_s: &FeatureVector, c: f64, alpha: f64) -> Result<f64> {
        if self.diverged {
            return Err(diverged("cumulant estimator"));
        }
        phi_s.check_dim(self.w.len())?;
        check_alpha(alpha)?;
        let delta = c - phi_s.dot_unchecked(&self.w);
        self.diverged = !apply(&mut self.w, phi_s, alpha * delta, delta);
        if self.diverged {
            return Err(diverged("cumulant estimator"));
        }
        Ok(delta)
    }
}

/// Direct TD(0) estimator `v(φ) = φᵀv`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectWeights {
    v: Vec<f64>,
    diverged: bool,
}

impl DirectWeights {
    pub fn new(dim: usize) -> Self {
        Self {
            v: vec![0.0; dim],
            diverged: false,
        }
    }

    pub fn from_weights(v: Vec<f64>) -> Self {
        Self { v, diverged: false }
    }

    pub fn weights(&self) -> &[f64] {
        &self.v
    }

    pub fn is_diverged(&self) -> bool {
        self.diverged
    }

    pub fn predict(&self, phi: &FeatureVector) -> Result<f64> {
        phi.dot(&self.v)
    }

    /// `δ = c + γ'φ(S')ᵀv − φ(S)ᵀv`, `v ← v + αφ(S)δ`. On a terminating
    /// transition the caller passes `γ' = 0`. Returns `δ`.
    pub fn update(
        &mut self,
        phi_s: &FeatureVector,
        phi_next: &FeatureVector,
        c: f64,
        gamma_next: f64,
        alpha: f64,
    ) -> Result<f64> {
        if self.diverged {
            return Err(diverged("direct estimator"));
        }
        phi_s.check_dim(self.v.len())?;
        phi_next.check_dim(self.v.len())?;
        check_alpha(alpha)?;
        let next = if gamma_next == 0.0 {
            0.0
        } else {
            gamma_next * phi_next.dot_unchecked(&self.v)
        };
        let delta = c + next - phi_s.dot_unchecked(&self.v);
        self.diverged = !apply(&mut self.v, phi_s, alpha * delta, delta);
        if self.diverged {
            return Err(diverged("direct estimator"));
        }
        Ok(delta)
    }
}

/// Adds `scale·φ` into `w`; false when `δ` or any touched weight is not sane.
fn apply(w: &mut [f64], phi: &FeatureVector, scale: f64, delta: f64) -> bool {
    if !delta.is_finite() {
        return false;
    }
    let mut ok = true;
    for (i, x) in phi.nonzero() {
        w[i] += scale * x;
        ok &= w[i].abs() <= DIVERGENCE_LIMIT;
    }
    ok
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("step-size {alpha} must be finite and >= 0")));
    }
    Ok(())
}

fn diverged(learner: &str) -> Error {
    Error::Diverged {
        learner: learner.into(),
        time: 0,
    }
}

/// SR-based prediction `φᵀMw`, computed as `(Mᵀφ)·w`.
pub fn sr_based_predict(
    sr: &SuccessorMatrix,
    cw: &CumulantWeights,
    phi: &FeatureVector,
) -> Result<f64> {
    if cw.w.len() != sr.dim() {
        return Err(Error::DimensionMismatch {
            expected: sr.dim(),
            found: cw.w.len(),
        });
    }
    let psi = sr.predict(phi)?;
    Ok(dot(&psi, &cw.w))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// One prediction target with both learning paths.
#[derive(Clone, Debug)]
pub struct PredictorSlot {
    pub signal_id: SignalId,
    pub cumulant: CumulantWeights,
    pub direct: DirectWeights,
    pub activation_time: u64,
    pub alpha_cumulant: StepSize,
    pub alpha_direct: StepSize,
    active: bool,
}

impl PredictorSlot {
    pub fn new(
        signal_id: SignalId,
        dim: usize,
        activation_time: u64,
        alpha_cumulant: StepSize,
        alpha_direct: StepSize,
    ) -> Self {
        Self {
            signal_id,
            cumulant: CumulantWeights::new(dim),
            direct: DirectWeights::new(dim),
            activation_time,
            alpha_cumulant,
            alpha_direct,
            active: false,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Writes `w` and `v` as CSV behind a
    /// `# signal_id=..,activation_time=..,d=..` header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# signal_id={},activation_time={},d={}",
            self.signal_id,
            self.activation_time,
            self.cumulant.w.len()
        )?;
        writeln!(out, "index,w,v")?;
        for (i, (w, v)) in self.cumulant.w.iter().zip(&self.direct.v).enumerate() {
            writeln!(out, "{i},{w},{v}")?;
        }
        Ok(())
    }

    /// Restores a slot snapshot. Step sizes are not part of the snapshot.
    pub fn read_csv<R: BufRead>(
        input: R,
        alpha_cumulant: StepSize,
        alpha_direct: StepSize,
    ) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse { row: 1, msg: "empty snapshot".into() })??;
        let fields: HashMap<&str, &str> = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse { row: 1, msg: "missing header".into() })?
            .split(',')
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let field = |k: &str| -> Result<u64> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse { row: 1, msg: format!("missing or bad {k}") })
        };
        let signal_id = field("signal_id")? as usize;
        let activation_time = field("activation_time")?;
        let dim = field("d")? as usize;
        let mut w = Vec::with_capacity(dim);
        let mut v = Vec::with_capacity(dim);
        for (k, line) in lines.enumerate().skip(1) {
            let line = line?;
            let row = k + 2;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 3 {
                return Err(Error::Parse { row, msg: "expected index,w,v".into() });
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse { row, msg: format!("{s:?}: {e}") })
            };
            w.push(num(cells[1])?);
            v.push(num(cells[2])?);
        }
        if w.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: w.len() });
        }
        let mut slot = Self::new(signal_id, dim, activation_time, alpha_cumulant, alpha_direct);
        slot.cumulant = CumulantWeights::from_weights(w);
        slot.direct = DirectWeights::from_weights(v);
        Ok(slot)
    }
}

/// Source of per-signal cumulant samples for one transition.
pub trait CumulantSource {
    fn cumulant(&self, signal_id: SignalId) -> Option<f64>;
}

impl CumulantSource for [f64] {
    fn cumulant(&self, signal_id: SignalId) -> Option<f64> {
        self.get(signal_id).copied()
    }
}

impl CumulantSource for Vec<f64> {
    fn cumulant(&self, signal_id: SignalId) -> Option<f64> {
        self.get(signal_id).copied()
    }
}

impl CumulantSource for HashMap<SignalId, f64> {
    fn cumulant(&self, signal_id: SignalId) -> Option<f64> {
        self.get(&signal_id).copied()
    }
}

/// One observed transition `S → S'` with its cumulant samples.
pub struct Transition<'a> {
    pub phi_s: &'a FeatureVector,
    pub phi_next: &'a FeatureVector,
    /// `γ(S')` for the successor matrix. The direct learner substitutes 0 on
    /// terminating transitions.
    pub gamma_next: f64,
    pub terminal: bool,
    pub cumulants: &'a dyn CumulantSource,
}

/// TD errors produced for one active slot by a registry step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotUpdate {
    pub signal_id: SignalId,
    pub cumulant_td: f64,
    pub direct_td: f64,
}

/// Both predictions of an active slot at one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotPrediction {
    pub signal_id: SignalId,
    pub direct: f64,
    pub sr: f64,
}

/// A shared successor matrix and the predictor slots that reuse it.
#[derive(Clone, Debug)]
pub struct Registry {
    sr: SuccessorMatrix,
    sr_step: Option<StepSize>,
    slots: Vec<PredictorSlot>,
    psi: Vec<f64>,
}

impl Registry {
    pub fn new(sr: SuccessorMatrix, slots: Vec<PredictorSlot>) -> Result<Self> {
        let dim = sr.dim();
        for slot in &slots {
            if slot.cumulant.w.len() != dim || slot.direct.v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: slot.cumulant.w.len(),
                });
            }
        }
        Ok(Self {
            sr,
            sr_step: None,
            slots,
            psi: vec![0.0; dim],
        })
    }

    /// Drives the successor matrix step-size from a rule instead of its
    /// constant `α`; the rule is evaluated with activation time 0.
    pub fn with_sr_step(mut self, step: StepSize) -> Self {
        self.sr_step = Some(step);
        self
    }

    pub fn sr(&self) -> &SuccessorMatrix {
        &self.sr
    }

    pub fn slots(&self) -> &[PredictorSlot] {
        &self.slots
    }

    pub fn into_parts(self) -> (SuccessorMatrix, Vec<PredictorSlot>) {
        (self.sr, self.slots)
    }

    /// Marks every slot with `activation_time <= time` active.
    pub fn activate(&mut self, time: u64) {
        for slot in &mut self.slots {
            if !slot.active && slot.activation_time <= time {
                slot.active = true;
            }
        }
    }

    /// Predictions of every active slot at `phi`, with `Mᵀφ` computed once.
    pub fn predict(&mut self, phi: &FeatureVector, out: &mut Vec<SlotPrediction>) -> Result<()> {
        phi.check_dim(self.sr.dim())?;
        out.clear();
        self.sr.predict_into(phi, &mut self.psi);
        for slot in self.slots.iter().filter(|s| s.active) {
            out.push(SlotPrediction {
                signal_id: slot.signal_id,
                direct: phi.dot_unchecked(&slot.direct.v),
                sr: dot(&self.psi, &slot.cumulant.w),
            });
        }
        Ok(())
    }

    /// Activates due slots, updates the successor matrix once, then every
    /// active slot's cumulant and direct learners on the same transition.
    /// Terminating transitions end with the successor-matrix flush.
    pub fn step(&mut self, tr: &Transition<'_>, time: u64) -> Result<Vec<SlotUpdate>> {
        self.activate(time);
        let mut samples = Vec::with_capacity(self.slots.len());
        for slot in self.slots.iter().filter(|s| s.active) {
            let c = tr
                .cumulants
                .cumulant(slot.signal_id)
                .ok_or(Error::MissingCumulant { signal_id: slot.signal_id })?;
            samples.push(c);
        }

        let k = tr.phi_s.active_count();
        if let Some(step) = self.sr_step {
            self.sr.set_alpha(step.at(time, 0, k))?;
        }
        self.sr
            .update_with_gamma(tr.phi_s, tr.phi_next, tr.gamma_next)
            .map_err(|e| at_time(e, time))?;

        let direct_gamma = if tr.terminal { 0.0 } else { tr.gamma_next };
        let mut out = Vec::with_capacity(samples.len());
        for (slot, c) in self.slots.iter_mut().filter(|s| s.active).zip(samples) {
            let id = slot.signal_id;
            let label = |path: &str| format!("signal {id} {path} estimator");
            let a_c = slot.alpha_cumulant.at(time, slot.activation_time, k);
            let cumulant_td = slot
                .cumulant
                .update(tr.phi_s, c, a_c)
                .map_err(|_| Error::Diverged { learner: label("cumulant"), time })?;
            let a_d = slot.alpha_direct.at(time, slot.activation_time, k);
            let direct_td = slot
                .direct
                .update(tr.phi_s, tr.phi_next, c, direct_gamma, a_d)
                .map_err(|_| Error::Diverged { learner: label("direct"), time })?;
            out.push(SlotUpdate { signal_id: slot.signal_id, cumulant_td, direct_td });
        }

        if tr.terminal {
            self.sr.terminal_flush(tr.phi_next).map_err(|e| at_time(e, time))?;
        }
        Ok(out)
    }
}

fn at_time(e: Error, time: u64) -> Error {
    match e {
        Error::Diverged { learner, .. } => Error::Diverged { learner, time },
        other => other,
    }
}
