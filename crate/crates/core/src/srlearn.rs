//! TD(0) learning of successor features `ψ(φ) = Mᵀφ`.
//!
//! The update is the semi-gradient rule
//! `δ = φ(S) + γ' Mᵀφ(S') − Mᵀφ(S)`, `M ← M + α φ(S) ⊗ δ`, plus the episodic
//! flush `δ = φ(S') − Mᵀφ(S')` applied once at termination. With binary
//! features only the rows at the active indices of `φ(S)` are touched.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Any `|M|` entry above this magnitude marks the learner as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Discount applied to the successor of a transition.
#[derive(Clone)]
pub enum Discount {
    Constant(f64),
    /// State-dependent discount evaluated on the next state's features.
    Function(Arc<dyn Fn(&FeatureVector) -> f64 + Send + Sync>),
}

impl Discount {
    pub fn constant(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
        }
        Ok(Discount::Constant(gamma))
    }

    pub fn at(&self, phi_next: &FeatureVector) -> f64 {
        match self {
            Discount::Constant(g) => *g,
            Discount::Function(f) => f(phi_next),
        }
    }

    /// The constant value, if any.
    pub fn nominal(&self) -> Option<f64> {
        match self {
            Discount::Constant(g) => Some(*g),
            Discount::Function(_) => None,
        }
    }
}

impl fmt::Debug for Discount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Discount::Constant(g) => write!(f, "Constant({g})"),
            Discount::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Linear successor-feature estimator with a `d×d` weight matrix stored
/// row-major, so row `i` is the contribution of feature `i` to `ψ`.
#[derive(Clone, Debug)]
pub struct SuccessorMatrix {
    dim: usize,
    m: Vec<f64>,
    discount: Discount,
    alpha: f64,
    diverged: bool,
    updates: u64,
}

impl SuccessorMatrix {
    /// Zero-initialized matrix.
    pub fn new(dim: usize, discount: Discount, alpha: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        check_alpha(alpha)?;
        Ok(Self {
            dim,
            m: vec![0.0; dim * dim],
            discount,
            alpha,
            diverged: false,
            updates: 0,
        })
    }

    /// Builds a matrix from explicit row-major weights.
    pub fn from_rows(dim: usize, rows: Vec<f64>, discount: Discount, alpha: f64) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: rows.len(),
            });
        }
        let mut sr = Self::new(dim, discount, alpha)?;
        sr.m = rows;
        Ok(sr)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        check_alpha(alpha)?;
        self.alpha = alpha;
        Ok(())
    }

    pub fn discount(&self) -> &Discount {
        &self.discount
    }

    pub fn is_diverged(&self) -> bool {
        self.diverged
    }

    /// Number of successful updates (including flushes).
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Zeroes the weights and clears the divergence flag.
    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.diverged = false;
        self.updates = 0;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.m[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.dim + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.m
    }

    /// `ψ(φ) = Mᵀφ`.
    pub fn predict(&self, phi: &FeatureVector) -> Result<Vec<f64>> {
        phi.check_dim(self.dim)?;
        let mut out = vec![0.0; self.dim];
        self.predict_into(phi, &mut out);
        Ok(out)
    }

    pub(crate) fn predict_into(&self, phi: &FeatureVector, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, v) in phi.nonzero() {
            let row = self.row(i);
            if v == 1.0 {
                out.iter_mut().zip(row).for_each(|(o, r)| *o += r);
            } else {
                out.iter_mut().zip(row).for_each(|(o, r)| *o += v * r);
            }
        }
    }

    /// One TD(0) step on the transition `S → S'` with discount `γ(S')`
    /// taken from the configured [`Discount`]. Returns `δ`.
    pub fn update(&mut self, phi_s: &FeatureVector, phi_next: &FeatureVector) -> Result<Vec<f64>> {
        let gamma_next = self.discount.at(phi_next);
        self.update_with_gamma(phi_s, phi_next, gamma_next)
    }

    /// One TD(0) step with an explicit `γ_{t+1}`. Returns `δ`.
    pub fn update_with_gamma(
        &mut self,
        phi_s: &FeatureVector,
        phi_next: &FeatureVector,
        gamma_next: f64,
    ) -> Result<Vec<f64>> {
        self.check_live()?;
        phi_s.check_dim(self.dim)?;
        phi_next.check_dim(self.dim)?;
        if !(0.0..=1.0).contains(&gamma_next) {
            return Err(Error::invalid(format!("gamma {gamma_next} outside [0, 1]")));
        }
        let mut delta = vec![0.0; self.dim];
        let mut psi_s = vec![0.0; self.dim];
        self.predict_into(phi_next, &mut delta);
        self.predict_into(phi_s, &mut psi_s);
        for (d, p) in delta.iter_mut().zip(&psi_s) {
            *d = gamma_next * *d - p;
        }
        for (i, v) in phi_s.nonzero() {
            delta[i] += v;
        }
        self.apply(phi_s, &delta)?;
        Ok(delta)
    }

    /// Episodic terminal flush: drives `ψ(φ(S'))` toward `φ(S')`.
    pub fn terminal_flush(&mut self, phi_terminal: &FeatureVector) -> Result<Vec<f64>> {
        self.check_live()?;
        phi_terminal.check_dim(self.dim)?;
        let mut delta = vec![0.0; self.dim];
        self.predict_into(phi_terminal, &mut delta);
        delta.iter_mut().for_each(|d| *d = -*d);
        for (i, v) in phi_terminal.nonzero() {
            delta[i] += v;
        }
        self.apply(phi_terminal, &delta)?;
        Ok(delta)
    }

    fn apply(&mut self, phi: &FeatureVector, delta: &[f64]) -> Result<()> {
        if delta.iter().any(|d| !d.is_finite()) {
            self.diverged = true;
            return Err(self.diverged_error());
        }
        let dim = self.dim;
        let alpha = self.alpha;
        let mut blown = false;
        for (i, v) in phi.nonzero() {
            let scale = alpha * v;
            let row = &mut self.m[i * dim..(i + 1) * dim];
            for (r, d) in row.iter_mut().zip(delta) {
                *r += scale * d;
                blown |= !(r.abs() <= DIVERGENCE_LIMIT);
            }
        }
        self.updates += 1;
        if blown {
            self.diverged = true;
            return Err(self.diverged_error());
        }
        Ok(())
    }

    fn check_live(&self) -> Result<()> {
        if self.diverged {
            Err(self.diverged_error())
        } else {
            Ok(())
        }
    }

    fn diverged_error(&self) -> Error {
        Error::Diverged {
            learner: "successor matrix".into(),
            time: self.updates,
        }
    }

    /// Writes a CSV snapshot: a `# d=<d>,gamma=<γ>,alpha=<α>` header line
    /// followed by one comma-separated row of `M` per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let gamma = self
            .discount
            .nominal()
            .map_or_else(|| "function".to_string(), |g| g.to_string());
        writeln!(out, "# d={},gamma={},alpha={}", self.dim, gamma, self.alpha)?;
        for i in 0..self.dim {
            let line: Vec<String> = self.row(i).iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`SuccessorMatrix::write_csv`]. A
    /// non-constant discount must be supplied through `discount`.
    pub fn read_csv<R: BufRead>(input: R, discount: Option<Discount>) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse { row: 1, msg: "empty snapshot".into() })??;
        let header = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse { row: 1, msg: "missing header".into() })?;
        let (mut dim, mut gamma, mut alpha) = (None, None, None);
        for kv in header.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse { row: 1, msg: format!("bad header field {kv:?}") })?;
            let bad = |_| Error::Parse { row: 1, msg: format!("bad value for {k}: {v:?}") };
            match k {
                "d" => dim = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "gamma" if v == "function" => {}
                "gamma" => gamma = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "alpha" => alpha = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                _ => return Err(Error::Parse { row: 1, msg: format!("unknown header key {k}") }),
            }
        }
        let dim = dim.ok_or_else(|| Error::Parse { row: 1, msg: "missing d".into() })?;
        let alpha = alpha.unwrap_or(0.0);
        let discount = match (discount, gamma) {
            (Some(d), _) => d,
            (None, Some(g)) => Discount::constant(g)?,
            (None, None) => {
                return Err(Error::Parse { row: 1, msg: "snapshot has no constant gamma".into() })
            }
        };
        let mut rows = Vec::with_capacity(dim * dim);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = rows.len();
            for cell in line.split(',') {
                rows.push(cell.trim().parse::<f64>().map_err(|e| Error::Parse {
                    row: k + 2,
                    msg: format!("{cell:?}: {e}"),
                })?);
            }
            if rows.len() - before != dim {
                return Err(Error::Parse { row: k + 2, msg: format!("expected {dim} values") });
            }
        }
        Self::from_rows(dim, rows, discount, alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("step-size {alpha} must be finite and >= 0")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::encode_one_hot;
    use approx::assert_abs_diff_eq;

    fn hot(i: usize, n: usize) -> FeatureVector {
        encode_one_hot(i, n).unwrap()
    }

    fn chain_fixed_point() -> SuccessorMatrix {
        SuccessorMatrix::from_rows(
            2,
            vec![1.0, 0.5, 0.0, 1.0],
            Discount::constant(0.5).unwrap(),
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn predict_examples() {
        let id = SuccessorMatrix::from_rows(2, vec![1.0, 0.0, 0.0, 1.0], Discount::Constant(0.5), 0.1)
            .unwrap();
        assert_eq!(id.predict(&hot(0, 2)).unwrap(), vec![1.0, 0.0]);
        let zero = SuccessorMatrix::new(2, Discount::Constant(0.5), 0.1).unwrap();
        assert_eq!(zero.predict(&hot(1, 2)).unwrap(), vec![0.0, 0.0]);
        assert_eq!(chain_fixed_point().predict(&hot(0, 2)).unwrap(), vec![1.0, 0.5]);
        assert!(zero.predict(&hot(0, 3)).is_err());
    }

    #[test]
    fn update_from_zero() {
        let mut sr = SuccessorMatrix::new(2, Discount::Constant(0.5), 1.0).unwrap();
        let delta = sr.update_with_gamma(&hot(0, 2), &hot(1, 2), 0.5).unwrap();
        assert_eq!(delta, vec![1.0, 0.0]);
        assert_eq!(sr.row(0), &[1.0, 0.0]);
        assert_eq!(sr.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn update_with_zero_gamma() {
        let mut sr = SuccessorMatrix::new(2, Discount::Constant(0.0), 0.5).unwrap();
        let delta = sr.update_with_gamma(&hot(0, 2), &hot(1, 2), 0.0).unwrap();
        assert_eq!(delta, vec![1.0, 0.0]);
        assert_eq!(sr.get(0, 0), 0.5);
    }

    #[test]
    fn update_at_fixed_point_is_zero() {
        let mut sr = chain_fixed_point();
        let delta = sr.update(&hot(0, 2), &hot(1, 2)).unwrap();
        assert_eq!(delta, vec![0.0, 0.0]);
        assert_eq!(sr.weights(), &[1.0, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn flush_examples() {
        let mut sr = SuccessorMatrix::new(2, Discount::Constant(0.5), 1.0).unwrap();
        sr.terminal_flush(&hot(1, 2)).unwrap();
        assert_eq!(sr.row(1), &[0.0, 1.0]);
        let delta = sr.terminal_flush(&hot(1, 2)).unwrap();
        assert_eq!(delta, vec![0.0, 0.0]);
        assert_eq!(sr.row(1), &[0.0, 1.0]);

        let mut sr =
            SuccessorMatrix::from_rows(2, vec![0.0, 0.0, 0.0, 0.5], Discount::Constant(0.5), 0.5)
                .unwrap();
        sr.terminal_flush(&hot(1, 2)).unwrap();
        assert_eq!(sr.row(1), &[0.0, 0.75]);
    }

    #[test]
    fn sparse_update_touches_only_active_rows() {
        let dim = 6;
        let mut sr = SuccessorMatrix::new(dim, Discount::Constant(0.9), 0.1).unwrap();
        let s = FeatureVector::binary(dim, vec![1, 4]).unwrap();
        let s2 = FeatureVector::binary(dim, vec![0, 2, 5]).unwrap();
        sr.update(&s2, &s).unwrap();
        let before = sr.weights().to_vec();
        sr.update(&s, &s2).unwrap();
        for i in [0, 2, 3, 5] {
            assert_eq!(sr.row(i), &before[i * dim..(i + 1) * dim]);
        }
        assert_ne!(sr.row(1), &before[dim..2 * dim]);
    }

    #[test]
    fn dense_and_binary_updates_agree() {
        let dim = 4;
        let mut a = SuccessorMatrix::new(dim, Discount::Constant(0.7), 0.2).unwrap();
        let mut b = a.clone();
        let seq = [vec![0, 1], vec![2], vec![1, 3], vec![0, 2, 3]];
        for w in seq.windows(2) {
            let s = FeatureVector::binary(dim, w[0].clone()).unwrap();
            let n = FeatureVector::binary(dim, w[1].clone()).unwrap();
            a.update(&s, &n).unwrap();
            b.update(
                &FeatureVector::dense(s.to_dense()).unwrap(),
                &FeatureVector::dense(n.to_dense()).unwrap(),
            )
            .unwrap();
        }
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn divergence_is_flagged_and_sticky() {
        // Two active features with α = 10 and γ = 0 scale δ by (1 − 2α) per step.
        let dim = 2;
        let mut sr = SuccessorMatrix::new(dim, Discount::Constant(0.0), 10.0).unwrap();
        let phi = FeatureVector::dense(vec![1.0, 1.0]).unwrap();
        let mut failed = false;
        for _ in 0..200 {
            if sr.update(&phi, &phi).is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed);
        assert!(sr.is_diverged());
        assert!(matches!(sr.update(&phi, &phi), Err(Error::Diverged { .. })));
        sr.reset();
        assert!(!sr.is_diverged());
        assert!(sr.weights().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rejects_bad_gamma_and_dims() {
        let mut sr = SuccessorMatrix::new(2, Discount::Constant(0.5), 0.1).unwrap();
        assert!(sr.update_with_gamma(&hot(0, 2), &hot(1, 2), 1.5).is_err());
        assert!(sr.update(&hot(0, 3), &hot(1, 2)).is_err());
        assert!(SuccessorMatrix::new(2, Discount::Constant(0.5), -0.1).is_err());
    }

    #[test]
    fn function_discount_is_used() {
        let g = Discount::Function(Arc::new(|phi: &FeatureVector| {
            if phi.active() == Some(&[1][..]) {
                0.0
            } else {
                0.5
            }
        }));
        let mut sr = SuccessorMatrix::from_rows(2, vec![0.0, 0.0, 0.0, 1.0], g, 1.0).unwrap();
        // γ(S'=1) = 0, so the target ignores ψ(1).
        let delta = sr.update(&hot(0, 2), &hot(1, 2)).unwrap();
        assert_eq!(delta, vec![1.0, 0.0]);
    }

    #[test]
    fn csv_snapshot_round_trip() {
        let sr = chain_fixed_point();
        let mut buf = Vec::new();
        sr.write_csv(&mut buf).unwrap();
        let back = SuccessorMatrix::read_csv(&buf[..], None).unwrap();
        assert_eq!(back.dim(), 2);
        assert_eq!(back.weights(), sr.weights());
        assert_eq!(back.discount().nominal(), Some(0.5));
        assert_eq!(back.alpha(), 0.1);
    }

    #[test]
    fn csv_snapshot_rejects_short_rows() {
        let text = "# d=2,gamma=0.5,alpha=0.1\n1,0\n0\n";
        assert!(matches!(
            SuccessorMatrix::read_csv(text.as_bytes(), None),
            Err(Error::Parse { row: 3, .. })
        ));
    }
}
