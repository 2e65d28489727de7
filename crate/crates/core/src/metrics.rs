//! Error measures for both experiment regimes.
//!
//! Grid world: per-episode squared-error sums against a reference, averaged
//! over episodes, then max-normalized per signal across step-sizes and both
//! methods. Replay: running MSE against the truncated empirical return,
//! normalized pairwise per signal.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::gvf::SignalId;

/// Which estimate an error belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Direct,
    Sr,
}

impl Method {
    pub const BOTH: [Method; 2] = [Method::Direct, Method::Sr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Sr => "sr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `(signal, method, α, γ)` key; floats are ordered by `total_cmp`.
#[derive(Clone, Copy, Debug)]
pub struct ErrorKey {
    pub signal_id: SignalId,
    pub method: Method,
    pub alpha: f64,
    pub gamma: f64,
}

impl PartialEq for ErrorKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ErrorKey {}

impl PartialOrd for ErrorKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ErrorKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gamma
            .total_cmp(&other.gamma)
            .then(self.alpha.total_cmp(&other.alpha))
            .then(self.signal_id.cmp(&other.signal_id))
            .then(self.method.cmp(&other.method))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Sums {
    total: f64,
    episodes: u64,
}

/// Running per-key sums of per-episode squared errors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorAccumulator {
    entries: BTreeMap<ErrorKey, Sums>,
}

impl ErrorAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one episode's within-episode squared-error sum.
    pub fn record_episode(&mut self, key: ErrorKey, episode_sum: f64) -> Result<()> {
        if !(episode_sum >= 0.0) {
            return Err(Error::invalid(format!("squared-error sum {episode_sum} must be >= 0")));
        }
        let e = self.entries.entry(key).or_default();
        e.total += episode_sum;
        e.episodes += 1;
        Ok(())
    }

    pub fn total(&self, key: &ErrorKey) -> Option<f64> {
        self.entries.get(key).map(|s| s.total)
    }

    pub fn episodes(&self, key: &ErrorKey) -> u64 {
        self.entries.get(key).map_or(0, |s| s.episodes)
    }

    /// `(1/E)·Σ_e (episode sum)` for `key`.
    pub fn mse(&self, key: &ErrorKey) -> Result<f64> {
        let s = self.entries.get(key).copied().unwrap_or_default();
        if s.episodes == 0 {
            return Err(Error::invalid("MSE over zero episodes is undefined"));
        }
        Ok(s.total / s.episodes as f64)
    }

    pub fn keys(&self) -> impl Iterator<Item = &ErrorKey> {
        self.entries.keys()
    }

    pub fn merge(&mut self, other: &Self) {
        for (k, s) in &other.entries {
            let e = self.entries.entry(*k).or_default();
            e.total += s.total;
            e.episodes += s.episodes;
        }
    }
}

/// Cumulative MSE: the mean over episodes of within-episode squared-error sums.
pub fn grid_mse(episode_sums: &[f64]) -> Result<f64> {
    if episode_sums.is_empty() {
        return Err(Error::invalid("MSE over zero episodes is undefined"));
    }
    Ok(episode_sums.iter().sum::<f64>() / episode_sums.len() as f64)
}

/// One cell of an MSE table for a single discount.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MseEntry {
    pub signal_id: SignalId,
    pub method: Method,
    pub alpha: f64,
    pub mse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmseEntry {
    pub signal_id: SignalId,
    pub method: Method,
    pub alpha: f64,
    pub mse: f64,
    pub nmse: f64,
    /// The signal's errors were all zero; its NMSE is reported as 0.
    pub all_zero: bool,
}

/// Divides each entry by its signal's maximum MSE over every α and both
/// methods. Non-finite MSEs (diverged cells) are kept as NaN and excluded
/// from the maximum.
pub fn grid_nmse(table: &[MseEntry]) -> Result<Vec<NmseEntry>> {
    if table.is_empty() {
        return Err(Error::invalid("empty MSE table"));
    }
    let mut max: BTreeMap<SignalId, f64> = BTreeMap::new();
    for e in table {
        let m = max.entry(e.signal_id).or_insert(0.0);
        if e.mse.is_finite() {
            *m = m.max(e.mse);
        } else if !e.mse.is_nan() && e.mse < 0.0 {
            return Err(Error::invalid("negative MSE"));
        }
    }
    Ok(table
        .iter()
        .map(|e| {
            let m = max[&e.signal_id];
            let all_zero = m == 0.0;
            let nmse = if !e.mse.is_finite() {
                f64::NAN
            } else if all_zero {
                0.0
            } else {
                e.mse / m
            };
            NmseEntry { signal_id: e.signal_id, method: e.method, alpha: e.alpha, mse: e.mse, nmse, all_zero }
        })
        .collect())
}

/// Truncated returns `G_t = C_{t+1} + γG_{t+1}` with `G` at the last step 0.
/// `cumulants[t]` is the cumulant observed on arrival at step `t`.
pub fn truncated_returns(cumulants: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} must be in [0, 1) for truncated returns")));
    }
    let mut g = vec![0.0; cumulants.len()];
    for t in (0..cumulants.len().saturating_sub(1)).rev() {
        g[t] = cumulants[t + 1] + gamma * g[t + 1];
    }
    Ok(g)
}

/// Running mean of `(V_t − G_t)²` from the first step to each `t`.
pub fn replay_mse_vs_return(predictions: &[f64], cumulants: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if predictions.len() != cumulants.len() {
        return Err(Error::DimensionMismatch { expected: predictions.len(), found: cumulants.len() });
    }
    let g = truncated_returns(cumulants, gamma)?;
    let mut sum = 0.0;
    Ok(predictions
        .iter()
        .zip(&g)
        .enumerate()
        .map(|(k, (v, g))| {
            sum += (v - g) * (v - g);
            sum / (k + 1) as f64
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmsePair {
    pub direct: f64,
    pub sr: f64,
    /// Both errors were zero.
    pub all_zero: bool,
}

/// Divides both MSEs by their maximum; the larger maps to 1.
pub fn replay_nmse(direct: f64, sr: f64) -> Result<NmsePair> {
    if !(direct >= 0.0 && sr >= 0.0) {
        return Err(Error::invalid("MSE values must be non-negative"));
    }
    let m = direct.max(sr);
    if m == 0.0 {
        return Ok(NmsePair { direct: 0.0, sr: 0.0, all_zero: true });
    }
    Ok(NmsePair { direct: direct / m, sr: sr / m, all_zero: false })
}

/// Mean and normal-approximation 95% half-width `1.96·s/√n`.
pub fn mean_ci95(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_mse_examples() {
        assert_eq!(grid_mse(&[1.0 + 1.0 + 1.0]).unwrap(), 3.0);
        assert_eq!(grid_mse(&[3.0, 1.0]).unwrap(), 2.0);
        assert_eq!(grid_mse(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(grid_mse(&[]).is_err());
    }

    #[test]
    fn accumulator_matches_grid_mse_and_merges() {
        let key = ErrorKey { signal_id: 1, method: Method::Sr, alpha: 0.5, gamma: 0.9 };
        let mut a = ErrorAccumulator::new();
        a.record_episode(key, 3.0).unwrap();
        let mut b = ErrorAccumulator::new();
        b.record_episode(key, 1.0).unwrap();
        b.record_episode(key, 2.0).unwrap();
        a.merge(&b);
        assert_eq!(a.episodes(&key), 3);
        assert_eq!(a.mse(&key).unwrap(), 2.0);
        assert!(a.record_episode(key, -1.0).is_err());
    }

    fn entry(signal_id: usize, method: Method, alpha: f64, mse: f64) -> MseEntry {
        MseEntry { signal_id, method, alpha, mse }
    }

    #[test]
    fn grid_nmse_examples() {
        let table = [
            entry(0, Method::Direct, 0.1, 4.0),
            entry(0, Method::Direct, 0.5, 3.0),
            entry(0, Method::Sr, 0.1, 2.0),
            entry(0, Method::Sr, 0.5, 1.0),
        ];
        let out = grid_nmse(&table).unwrap();
        let vals: Vec<f64> = out.iter().map(|e| e.nmse).collect();
        assert_eq!(vals, vec![1.0, 0.75, 0.5, 0.25]);

        let table = [entry(0, Method::Direct, 0.1, 100.0), entry(1, Method::Direct, 0.1, 0.1)];
        let out = grid_nmse(&table).unwrap();
        assert_eq!(out[0].nmse, out[1].nmse);

        let out = grid_nmse(&[entry(3, Method::Sr, 0.1, 0.0)]).unwrap();
        assert!(out[0].all_zero);
        assert_eq!(out[0].nmse, 0.0);
        assert!(grid_nmse(&[]).is_err());
    }

    #[test]
    fn returns_examples() {
        let c = vec![1.0; 200];
        let g = truncated_returns(&c, 0.5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
        assert_eq!(*g.last().unwrap(), 0.0);
        let mse = replay_mse_vs_return(&vec![0.0; 200], &c, 0.5).unwrap();
        assert!((mse[0] - 4.0).abs() < 1e-12);
        let perfect = replay_mse_vs_return(&g, &c, 0.5).unwrap();
        assert!(perfect.iter().all(|x| *x == 0.0));
        assert!(truncated_returns(&c, 1.0).is_err());
        let g = truncated_returns(&[5.0, 7.0, 9.0], 0.9).unwrap();
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn backward_returns_match_direct_sum() {
        let c: Vec<f64> = (0..30).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let gamma = 0.95;
        let g = truncated_returns(&c, gamma).unwrap();
        for t in 0..c.len() {
            let direct: f64 = (t + 1..c.len()).map(|k| gamma.powi((k - t - 1) as i32) * c[k]).sum();
            assert!((g[t] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_nmse_examples() {
        assert_eq!(replay_nmse(4.0, 2.0).unwrap(), NmsePair { direct: 1.0, sr: 0.5, all_zero: false });
        assert_eq!(replay_nmse(3.0, 3.0).unwrap(), NmsePair { direct: 1.0, sr: 1.0, all_zero: false });
        assert!(replay_nmse(0.0, 0.0).unwrap().all_zero);
    }

    #[test]
    fn ci_examples() {
        let (m, h) = mean_ci95(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 1.96 * 2f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_ci95(&[5.0]), (5.0, 0.0));
    }

    proptest! {
        #[test]
        fn concatenated_mse_is_count_weighted(
            a in proptest::collection::vec(0.0f64..100.0, 1..20),
            b in proptest::collection::vec(0.0f64..100.0, 1..20),
        ) {
            let all: Vec<f64> = a.iter().chain(&b).copied().collect();
            let na = a.len() as f64;
            let nb = b.len() as f64;
            let weighted = (grid_mse(&a).unwrap() * na + grid_mse(&b).unwrap() * nb) / (na + nb);
            prop_assert!((grid_mse(&all).unwrap() - weighted).abs() <= 1e-9 * weighted.max(1.0));
        }
    }
}
