//! Observation encodings shared by every learner.
//!
//! A [`FeatureVector`] is either dense (one real per dimension) or binary
//! (a sorted set of active indices, each implicitly `1.0`). Learners walk
//! [`FeatureVector::nonzero`] so binary vectors cost O(active) per update.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    Binary(Vec<usize>),
}

/// Feature encoding `φ(s)` of dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    dim: usize,
    storage: Storage,
}

impl FeatureVector {
    pub fn dense(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        Ok(Self {
            dim: values.len(),
            storage: Storage::Dense(values),
        })
    }

    /// Binary features from a set of active indices. Indices are sorted and
    /// deduplicated; any index `>= dim` is rejected.
    pub fn binary(dim: usize, mut active: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        active.sort_unstable();
        active.dedup();
        if let Some(&last) = active.last() {
            if last >= dim {
                return Err(Error::IndexOutOfRange { index: last, dim });
            }
        }
        Ok(Self {
            dim,
            storage: Storage::Binary(active),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.storage, Storage::Binary(_))
    }

    /// Active indices of a binary vector, `None` for dense storage.
    pub fn active(&self) -> Option<&[usize]> {
        match &self.storage {
            Storage::Binary(idx) => Some(idx),
            Storage::Dense(_) => None,
        }
    }

    /// Number of non-zero entries.
    pub fn active_count(&self) -> usize {
        match &self.storage {
            Storage::Binary(idx) => idx.len(),
            Storage::Dense(v) => v.iter().filter(|x| **x != 0.0).count(),
        }
    }

    /// Iterates `(index, value)` over the non-zero entries in index order.
    pub fn nonzero(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match &self.storage {
            Storage::Binary(idx) => Box::new(idx.iter().map(|&i| (i, 1.0))),
            Storage::Dense(v) => Box::new(
                v.iter()
                    .copied()
                    .enumerate()
                    .filter(|(_, x)| *x != 0.0),
            ),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(v) => v.clone(),
            Storage::Binary(idx) => {
                let mut out = vec![0.0; self.dim];
                for &i in idx {
                    out[i] = 1.0;
                }
                out
            }
        }
    }

    /// `Σᵢ φᵢ·wᵢ`. For binary storage this is the sum of `w` at the active
    /// indices, accumulated in ascending index order.
    pub fn dot(&self, weights: &[f64]) -> Result<f64> {
        self.check_dim(weights.len())?;
        Ok(self.dot_unchecked(weights))
    }

    pub(crate) fn dot_unchecked(&self, weights: &[f64]) -> f64 {
        match &self.storage {
            Storage::Binary(idx) => idx.iter().fold(0.0, |acc, &i| acc + weights[i]),
            Storage::Dense(v) => v
                .iter()
                .zip(weights)
                .fold(0.0, |acc, (a, b)| acc + a * b),
        }
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.dim,
            });
        }
        Ok(())
    }
}

/// Tabular encoder: state `i` of `|S|` maps to the `i`-th unit vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OneHotEncoder {
    state_count: usize,
}

impl OneHotEncoder {
    pub fn new(state_count: usize) -> Result<Self> {
        if state_count == 0 {
            return Err(Error::invalid("state count must be positive"));
        }
        Ok(Self { state_count })
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn encode(&self, state_index: usize) -> Result<FeatureVector> {
        encode_one_hot(state_index, self.state_count)
    }
}

pub fn encode_one_hot(state_index: usize, state_count: usize) -> Result<FeatureVector> {
    if state_index >= state_count {
        return Err(Error::IndexOutOfRange {
            index: state_index,
            dim: state_count,
        });
    }
    FeatureVector::binary(state_count, vec![state_index])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_hot_examples() {
        assert_eq!(encode_one_hot(0, 3).unwrap().active(), Some(&[0][..]));
        let v = encode_one_hot(2, 3).unwrap();
        assert_eq!(v.active(), Some(&[2][..]));
        assert_eq!(v.dim(), 3);
        assert!(matches!(
            encode_one_hot(3, 3),
            Err(Error::IndexOutOfRange { index: 3, dim: 3 })
        ));
    }

    #[test]
    fn dot_examples() {
        let a = encode_one_hot(1, 3).unwrap();
        assert_eq!(a.dot(&[5.0, 7.0, 9.0]).unwrap(), 7.0);
        let z = FeatureVector::dense(vec![0.0; 3]).unwrap();
        assert_eq!(z.dot(&[3.0, -1.0, 2.5]).unwrap(), 0.0);
        let b = FeatureVector::binary(3, vec![2, 0]).unwrap();
        assert_eq!(b.dot(&[1.0, 1.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn dot_rejects_mismatch() {
        let a = encode_one_hot(0, 3).unwrap();
        assert!(matches!(
            a.dot(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn binary_normalizes_indices() {
        let v = FeatureVector::binary(5, vec![4, 1, 4, 0]).unwrap();
        assert_eq!(v.active(), Some(&[0, 1, 4][..]));
        assert!(FeatureVector::binary(5, vec![5]).is_err());
    }

    #[test]
    fn one_hot_is_bijective() {
        let n = 17;
        let enc = OneHotEncoder::new(n).unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..n {
            let v = enc.encode(i).unwrap();
            assert_eq!(v.active().unwrap(), &[i]);
            assert!(seen.insert(v.active().unwrap().to_vec()));
        }
    }

    proptest! {
        #[test]
        fn sparse_and_dense_dot_agree_exactly(
            (dim, idx, w) in (1usize..64).prop_flat_map(|d| (
                Just(d),
                proptest::collection::vec(0..d, 0..d),
                proptest::collection::vec(-1e6f64..1e6, d),
            ))
        ) {
            let sparse = FeatureVector::binary(dim, idx).unwrap();
            let dense = FeatureVector::dense(sparse.to_dense()).unwrap();
            let a = sparse.dot(&w).unwrap();
            let b = dense.dot(&w).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
