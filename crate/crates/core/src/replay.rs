//! Offline replay of a sensor time series through the learners.
//!
//! A dataset is a table of named channels sampled at a fixed rate. Input
//! channels are turned into `[position, trace]` pairs, normalized to the
//! observed range and tile coded; target channels become the cumulants of
//! predictors activated one at a time at a fixed interval.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::gvf::{PredictorSlot, Registry, SignalId, SlotPrediction, StepSize, Transition};
use crate::metrics::{replay_mse_vs_return, replay_nmse, Method};
use crate::srlearn::{Discount, SuccessorMatrix};
use crate::tilecode::{TileCoder, TileCoderConfig};

pub const DEFAULT_RATE_HZ: f64 = 30.0;
pub const TRACE_DECAY: f64 = 0.8;
pub const TRACE_MIX: f64 = 0.2;

/// Named, equal-length real channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    time: Vec<f64>,
    pub rate_hz: f64,
}

/// Observed `[min, max]` of a channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    fn of(values: &[f64]) -> Self {
        let mut r = ChannelRange { min: f64::INFINITY, max: f64::NEG_INFINITY };
        for &v in values {
            r.include(v);
        }
        r
    }

    fn include(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    /// Maps into `[0, 1]`; a degenerate range maps everything to 0.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }
}

impl Dataset {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, rate_hz: f64) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), found: columns.len() });
        }
        let len = columns.first().map_or(0, Vec::len);
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != len {
                return Err(Error::invalid(format!(
                    "channel {name} has {} samples, expected {len}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("channel {name} has a non-finite value at step {i}")));
            }
        }
        for (i, n) in names.iter().enumerate() {
            if n == "t" || names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate or reserved channel name {n:?}")));
            }
        }
        let time = (0..len).map(|i| i as f64).collect();
        Ok(Self { names, columns, time, rate_hz })
    }

    /// Reads `t,<channel>...` CSV. Errors name the offending file line.
    pub fn ingest<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(input);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("t") {
            return Err(Error::Parse { row: 1, msg: "first column must be named t".into() });
        }
        if header.len() < 2 {
            return Err(Error::Parse { row: 1, msg: "no channel columns".into() });
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut columns = vec![Vec::new(); names.len()];
        let mut time = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    row,
                    msg: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row,
                    msg: format!("non-numeric value {field:?} in column {}", header.get(k).unwrap_or("?")),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse { row, msg: format!("non-finite value {field:?}") });
                }
                if k == 0 {
                    time.push(v);
                } else {
                    columns[k - 1].push(v);
                }
            }
        }
        let mut ds = Self::new(names, columns, DEFAULT_RATE_HZ)?;
        ds.time = time;
        for name in &ds.names {
            if ds.range(name).is_some_and(|r| r.is_degenerate()) {
                log::warn!("channel {name} is constant; it normalizes to 0");
            }
        }
        Ok(ds)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.time[i].to_string()];
            row.extend(self.columns.iter().map(|c| c[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::invalid(format!("unknown channel {name:?}")))
    }

    pub fn range(&self, name: &str) -> Option<ChannelRange> {
        self.channel(name).ok().filter(|c| !c.is_empty()).map(ChannelRange::of)
    }
}

/// Exponentially decaying trace per channel, seeded with the first
/// observation. `tr + 0.2·(x − tr)` equals `0.8·tr + 0.2·x` and keeps a
/// constant stream exactly fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceState {
    values: Vec<f64>,
}

impl TraceState {
    pub fn new(first: &[f64]) -> Self {
        Self { values: first.to_vec() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn update(&mut self, obs: &[f64]) {
        for (tr, x) in self.values.iter_mut().zip(obs) {
            *tr += TRACE_MIX * (x - *tr);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Ranges from a full pass over the dataset.
    #[default]
    Observed,
    /// Running min/max of the samples seen so far.
    Streaming,
}

pub fn build_features(ds: &Dataset, inputs: &[String], coder: &TileCoder) -> Result<Vec<FeatureVector>> {
    build_features_with(ds, inputs, coder, Normalization::Observed)
}

/// Encodes `[pos_j, tr_j]` for every input channel `j` at every step.
pub fn build_features_with(
    ds: &Dataset,
    inputs: &[String],
    coder: &TileCoder,
    normalization: Normalization,
) -> Result<Vec<FeatureVector>> {
    let channels: Vec<&[f64]> = inputs.iter().map(|n| ds.channel(n)).collect::<Result<_>>()?;
    if coder.config().input_dim != 2 * channels.len() {
        return Err(Error::DimensionMismatch { expected: coder.config().input_dim, found: 2 * channels.len() });
    }
    if ds.is_empty() {
        return Ok(Vec::new());
    }
    let mut ranges: Vec<ChannelRange> = match normalization {
        Normalization::Observed => channels.iter().map(|c| ChannelRange::of(c)).collect(),
        Normalization::Streaming => channels.iter().map(|c| ChannelRange::of(&c[..1])).collect(),
    };
    let first: Vec<f64> = channels.iter().map(|c| c[0]).collect();
    let mut trace = TraceState::new(&first);
    let mut obs = first;
    let mut input = vec![0.0; 2 * channels.len()];
    let mut out = Vec::with_capacity(ds.len());
    for t in 0..ds.len() {
        if t > 0 {
            for (o, c) in obs.iter_mut().zip(&channels) {
                *o = c[t];
            }
            trace.update(&obs);
        }
        if normalization == Normalization::Streaming {
            for (r, &x) in ranges.iter_mut().zip(&obs) {
                r.include(x);
            }
        }
        for (j, r) in ranges.iter().enumerate() {
            input[2 * j] = r.normalize(obs[j]);
            input[2 * j + 1] = r.normalize(trace.values()[j]);
        }
        out.push(coder.encode(&input)?);
    }
    Ok(out)
}

/// Linearly decaying step-size, restarted at each learner's activation and
/// divided by the number of active features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizeSchedule {
    pub alpha0: f64,
    pub total_steps: u64,
    pub activation_offset: u64,
}

impl StepSizeSchedule {
    pub fn new(alpha0: f64, total_steps: u64) -> Self {
        Self { alpha0, total_steps, activation_offset: 0 }
    }

    pub fn with_offset(self, activation_offset: u64) -> Self {
        Self { activation_offset, ..self }
    }

    /// `max(0, α₀ − (t − t_i)·α₀/T) / k`; times before `t_i` count as `t_i`.
    pub fn alpha(&self, t: u64, active_features: usize) -> f64 {
        if self.total_steps == 0 {
            return 0.0;
        }
        let elapsed = t.saturating_sub(self.activation_offset) as f64;
        let base = (self.alpha0 - elapsed * self.alpha0 / self.total_steps as f64).max(0.0);
        base / active_features.max(1) as f64
    }
}

pub fn schedule_alpha(s: &StepSizeSchedule, t: u64, active_features: usize) -> f64 {
    s.alpha(t, active_features)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    pub inputs: Vec<String>,
    /// Targets in activation order.
    pub targets: Vec<String>,
    pub gamma: f64,
    pub alpha0: f64,
    pub activation_interval: u64,
    /// Activate every target at step 0.
    pub from_start: bool,
    pub coder: TileCoderConfig,
    pub normalization: Normalization,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            inputs: vec!["shoulder_position".into(), "elbow_position".into()],
            targets: SYNTHETIC_TARGETS.iter().map(|s| s.to_string()).collect(),
            gamma: 0.95,
            alpha0: 0.1,
            activation_interval: 2000,
            from_start: false,
            coder: TileCoderConfig::default(),
            normalization: Normalization::Observed,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("replay gamma {} must be in [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.alpha0) {
            return Err(Error::Config(format!("replay alpha0 {} must be in [0, 1]", self.alpha0)));
        }
        if self.activation_interval == 0 && !self.from_start {
            return Err(Error::Config("activation interval must be positive".into()));
        }
        if self.inputs.is_empty() || self.targets.is_empty() {
            return Err(Error::Config("replay needs at least one input and one target".into()));
        }
        if self.coder.input_dim != 2 * self.inputs.len() {
            return Err(Error::Config(format!(
                "tile coder input_dim {} must be twice the input channel count {}",
                self.coder.input_dim,
                self.inputs.len()
            )));
        }
        Ok(())
    }

    pub fn activation_time(&self, k: usize) -> u64 {
        if self.from_start {
            0
        } else {
            k as u64 * self.activation_interval
        }
    }
}

/// Everything one predictor saw from its activation to the end of the data.
/// Index `k` of each vector is step `activation + k`; `cumulants[k]` is the
/// target observed on arrival at that step and `alphas[k]` the step-size
/// applied on the transition out of it (0 at the last step).
#[derive(Clone, Debug, PartialEq)]
pub struct SlotRecord {
    pub signal_id: SignalId,
    pub name: String,
    pub activation: u64,
    pub direct: Vec<f64>,
    pub sr: Vec<f64>,
    pub cumulants: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl SlotRecord {
    pub fn predictions(&self, method: Method) -> &[f64] {
        match method {
            Method::Direct => &self.direct,
            Method::Sr => &self.sr,
        }
    }

    /// Running MSE against the truncated return, indexed like the record.
    pub fn running_mse(&self, method: Method, gamma: f64) -> Result<Vec<f64>> {
        replay_mse_vs_return(self.predictions(method), &self.cumulants, gamma)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayRun {
    pub gamma: f64,
    pub steps: usize,
    pub slots: Vec<SlotRecord>,
    pub clamped_inputs: u64,
}

/// Running NMSE of one signal at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunningNmse {
    pub t: u64,
    pub signal_id: SignalId,
    pub direct: f64,
    pub sr: f64,
}

impl ReplayRun {
    /// Pairwise-normalized running MSE for every active signal at every step,
    /// ordered by step then signal.
    pub fn running_nmse(&self) -> Result<Vec<RunningNmse>> {
        let mut per_slot = Vec::with_capacity(self.slots.len());
        for s in &self.slots {
            per_slot.push((s.running_mse(Method::Direct, self.gamma)?, s.running_mse(Method::Sr, self.gamma)?));
        }
        let mut out = Vec::new();
        for t in 0..self.steps as u64 {
            for (s, (d, r)) in self.slots.iter().zip(&per_slot) {
                if t < s.activation {
                    continue;
                }
                let k = (t - s.activation) as usize;
                let pair = replay_nmse(d[k], r[k])?;
                out.push(RunningNmse { t, signal_id: s.signal_id, direct: pair.direct, sr: pair.sr });
            }
        }
        Ok(out)
    }

    /// Final running MSE per slot as `(direct, sr)`.
    pub fn final_mse(&self) -> Result<Vec<(f64, f64)>> {
        self.slots
            .iter()
            .map(|s| {
                let d = s.running_mse(Method::Direct, self.gamma)?;
                let r = s.running_mse(Method::Sr, self.gamma)?;
                Ok((d.last().copied().unwrap_or(0.0), r.last().copied().unwrap_or(0.0)))
            })
            .collect()
    }

    /// `t,signal_id,method,prediction,cumulant,alpha`, ordered by step, signal
    /// and method.
    pub fn write_records<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "signal_id", "method", "prediction", "cumulant", "alpha"])?;
        for t in 0..self.steps as u64 {
            for s in &self.slots {
                if t < s.activation {
                    continue;
                }
                let k = (t - s.activation) as usize;
                for m in Method::BOTH {
                    w.write_record([
                        t.to_string(),
                        s.signal_id.to_string(),
                        m.to_string(),
                        s.predictions(m)[k].to_string(),
                        s.cumulants[k].to_string(),
                        s.alphas[k].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Streams the dataset through one registry. Predictions at each step are
/// taken before the update on the transition out of it.
pub fn run_replay(ds: &Dataset, config: &ReplayConfig) -> Result<ReplayRun> {
    config.validate()?;
    if ds.len() < 2 {
        return Err(Error::invalid("replay needs at least two samples"));
    }
    let coder = TileCoder::new(config.coder.clone())?;
    let features = build_features_with(ds, &config.inputs, &coder, config.normalization)?;
    let targets: Vec<&[f64]> = config.targets.iter().map(|n| ds.channel(n)).collect::<Result<_>>()?;

    let dim = coder.output_dim();
    let total = (ds.len() - 1) as u64;
    let schedule = StepSizeSchedule::new(config.alpha0, total);
    let sr = SuccessorMatrix::new(dim, Discount::constant(config.gamma)?, config.alpha0)?;
    let slots = (0..targets.len())
        .map(|k| {
            let step = StepSize::Decaying(schedule);
            PredictorSlot::new(k, dim, config.activation_time(k), step, step)
        })
        .collect();
    let mut registry = Registry::new(sr, slots)?.with_sr_step(StepSize::Decaying(schedule));

    let mut records: Vec<SlotRecord> = config
        .targets
        .iter()
        .enumerate()
        .map(|(k, name)| SlotRecord {
            signal_id: k,
            name: name.clone(),
            activation: config.activation_time(k),
            direct: Vec::new(),
            sr: Vec::new(),
            cumulants: Vec::new(),
            alphas: Vec::new(),
        })
        .collect();

    let mut preds: Vec<SlotPrediction> = Vec::new();
    let mut cumulants = vec![0.0; targets.len()];
    let last = ds.len() - 1;
    for t in 0..ds.len() {
        let time = t as u64;
        registry.activate(time);
        registry.predict(&features[t], &mut preds)?;
        let k = features[t].active_count();
        for p in &preds {
            let rec = &mut records[p.signal_id];
            rec.direct.push(p.direct);
            rec.sr.push(p.sr);
            rec.cumulants.push(targets[p.signal_id][t]);
            rec.alphas.push(if t < last { schedule.with_offset(rec.activation).alpha(time, k) } else { 0.0 });
        }
        if t < last {
            for (c, col) in cumulants.iter_mut().zip(&targets) {
                *c = col[t + 1];
            }
            let tr = Transition {
                phi_s: &features[t],
                phi_next: &features[t + 1],
                gamma_next: config.gamma,
                terminal: false,
                cumulants: &cumulants,
            };
            registry.step(&tr, time)?;
        }
    }
    Ok(ReplayRun { gamma: config.gamma, steps: ds.len(), slots: records, clamped_inputs: coder.clamped_inputs() })
}

/// Target channels of the synthetic dataset, in default activation order.
pub const SYNTHETIC_TARGETS: [&str; 6] = [
    "shoulder_current",
    "elbow_current",
    "shoulder_position",
    "elbow_position",
    "shoulder_speed",
    "elbow_speed",
];

/// Two joints tracing a repeated closed circuit at a human, uneven tempo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub steps: usize,
    pub seed: u64,
    pub rate_hz: f64,
    /// Mean time for one circuit, seconds.
    pub circuit_seconds: f64,
    /// Relative spread of the per-circuit duration.
    pub circuit_jitter: f64,
    pub sensor_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            steps: 21_600,
            seed: 0,
            rate_hz: DEFAULT_RATE_HZ,
            circuit_seconds: 14.4,
            circuit_jitter: 0.2,
            sensor_noise: 0.002,
        }
    }
}

fn shoulder_angle(th: f64) -> f64 {
    0.5 * th.sin() + 0.12 * (2.0 * th + 0.7).sin() + 0.05 * (5.0 * th + 1.3).sin()
}

fn elbow_angle(th: f64) -> f64 {
    1.2 + 0.4 * th.cos() + 0.15 * (3.0 * th + 0.4).sin() + 0.04 * (4.0 * th).cos()
}

/// Joint positions follow multi-frequency sinusoids of the circuit phase;
/// speed is their finite difference and current combines a velocity term,
/// a gravity term on the elbow and friction, each with sensor noise.
pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.steps < 2 || !(cfg.rate_hz > 0.0) || !(cfg.circuit_seconds > 0.0) {
        return Err(Error::invalid("synthetic dataset needs steps >= 2 and positive rate and duration"));
    }
    if !(0.0..1.0).contains(&cfg.circuit_jitter) || !(cfg.sensor_noise >= 0.0) {
        return Err(Error::invalid("circuit jitter must be in [0, 1) and noise non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.sensor_noise).map_err(|e| Error::invalid(e.to_string()))?;
    let wobble = Normal::new(0.0, 0.02).map_err(|e| Error::invalid(e.to_string()))?;
    let tau = std::f64::consts::TAU;
    let dt = 1.0 / cfg.rate_hz;

    let draw_rate = |rng: &mut ChaCha8Rng| {
        let j = cfg.circuit_jitter;
        let secs = cfg.circuit_seconds * rng.random_range(1.0 - j..=1.0 + j);
        tau / (secs * cfg.rate_hz)
    };
    let mut rate = draw_rate(&mut rng);
    let mut phase = 0.0f64;
    let mut tempo = 1.0f64;
    let mut drift = [0.0f64; 2];

    let n = cfg.steps;
    let mut pos = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for _ in 0..n {
        pos[0].push(shoulder_angle(phase) + drift[0] + noise.sample(&mut rng));
        pos[1].push(elbow_angle(phase) + drift[1] + noise.sample(&mut rng));
        tempo = (0.95 * tempo + 0.05 + wobble.sample(&mut rng)).clamp(0.3, 1.7);
        let before = (phase / tau).floor();
        phase += rate * tempo;
        if (phase / tau).floor() > before {
            rate = draw_rate(&mut rng);
        }
        for d in &mut drift {
            *d = 0.995 * *d + 0.1 * wobble.sample(&mut rng);
        }
    }

    let mut speed = [vec![0.0; n], vec![0.0; n]];
    let mut current = [vec![0.0; n], vec![0.0; n]];
    for j in 0..2 {
        for t in 0..n {
            let v = if t == 0 { 0.0 } else { (pos[j][t] - pos[j][t - 1]) / dt };
            speed[j][t] = v + noise.sample(&mut rng);
            let gravity = if j == 1 { 0.35 * pos[j][t].sin() } else { 0.0 };
            let friction = 0.05 * (20.0 * v).tanh();
            current[j][t] = 0.6 * v + gravity + friction + 5.0 * noise.sample(&mut rng);
        }
    }
    let [sp, ep] = pos;
    let [ss, es] = speed;
    let [sc, ec] = current;
    let names = ["shoulder_position", "elbow_position", "shoulder_speed", "elbow_speed", "shoulder_current", "elbow_current"];
    Dataset::new(names.iter().map(|s| s.to_string()).collect(), vec![sp, ep, ss, es, sc, ec], cfg.rate_hz)
}
