use crate::error::{Error, Result};

/// A dense embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    components: Vec<f32>,
}

/// Vectors whose norm is within this distance of 1 are treated as already
/// normalized and left bit-for-bit untouched.
const UNIT_TOLERANCE: f64 = 1e-6;

impl Vector {
    /// Rejects empty and non-finite input.
    pub fn new(components: Vec<f32>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Contract("vector must have positive dimension".into()));
        }
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(Error::Contract(format!("vector component {i} is not finite")));
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.components
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.components
    }

    pub fn norm(&self) -> f64 {
        self.components.iter().map(|&c| f64::from(c) * f64::from(c)).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|&c| c == 0.0)
    }

    /// Unit-length copy. The zero vector stays zero; check [`Vector::is_zero`].
    pub fn normalized(&self) -> Vector {
        let n = self.norm();
        if n == 0.0 || (n - 1.0).abs() <= UNIT_TOLERANCE {
            return self.clone();
        }
        Vector {
            components: self.components.iter().map(|&c| (f64::from(c) / n) as f32).collect(),
        }
    }

    pub fn dot(&self, other: &Vector) -> f32 {
        dense_dot(&self.components, &other.components)
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
/// Summation order is fixed, so results are reproducible.
#[inline]
pub fn dense_dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// A sparse vector over a fixed dimension, indices strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl SparseVector {
    /// Builds from `(index, value)` pairs; duplicate indices are summed and
    /// explicit zeros dropped.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(u32, f32)>) -> Result<Self> {
        pairs.sort_by_key(|&(i, _)| i);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values: Vec<f32> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if i as usize >= dim {
                return Err(Error::Contract(format!("sparse index {i} out of range for dim {dim}")));
            }
            if !v.is_finite() {
                return Err(Error::Contract(format!("sparse value at {i} is not finite")));
            }
            if indices.last() == Some(&i) {
                *values.last_mut().expect("parallel vecs") += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let keep: Vec<bool> = values.iter().map(|&v| v != 0.0).collect();
        let mut k = keep.iter();
        indices.retain(|_| *k.next().expect("same len"));
        values.retain(|&v| v != 0.0);
        Ok(Self { dim, indices, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&c| f64::from(c) * f64::from(c)).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> SparseVector {
        let n = self.norm();
        if n == 0.0 || (n - 1.0).abs() <= UNIT_TOLERANCE {
            return self.clone();
        }
        SparseVector {
            dim: self.dim,
            indices: self.indices.clone(),
            values: self.values.iter().map(|&c| (f64::from(c) / n) as f32).collect(),
        }
    }

    /// Dot product against a dense slice of the same dimension.
    pub fn dot_dense(&self, dense: &[f32]) -> f32 {
        let mut s = 0.0f32;
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            s += v * dense[i as usize];
        }
        s
    }

    pub fn to_dense(&self) -> Vector {
        let mut c = vec![0.0f32; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            c[i as usize] = v;
        }
        Vector { components: c }
    }

    /// Scatter into a zeroed scratch buffer of length `dim`.
    pub(crate) fn scatter(&self, scratch: &mut [f32]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            scratch[i as usize] = v;
        }
    }

    pub(crate) fn clear(&self, scratch: &mut [f32]) {
        for &i in &self.indices {
            scratch[i as usize] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn rejects_bad_components() {
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![1.0, f32::NAN]).is_err());
        assert!(Vector::new(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn zero_vector_stays_zero() {
        let z = Vector::new(vec![0.0; 4]).unwrap();
        assert!(z.normalized().is_zero());
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..37).map(|i| i as f32 * 0.5).collect();
        let b: Vec<f32> = (0..37).map(|i| 1.0 - i as f32 * 0.01).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        assert!((f64::from(dense_dot(&a, &b)) - naive).abs() < 1e-3);
    }

    #[test]
    fn sparse_merges_duplicates() {
        let s = SparseVector::from_pairs(8, vec![(3, 1.0), (1, 2.0), (3, 0.5), (5, 0.0)]).unwrap();
        assert_eq!(s.indices(), &[1, 3]);
        assert_eq!(s.values(), &[2.0, 1.5]);
        assert!(SparseVector::from_pairs(2, vec![(2, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in proptest::collection::vec(-1e3f32..1e3, 1..64)) {
            let v = Vector::new(v).unwrap();
            let once = v.normalized();
            let twice = once.normalized();
            prop_assert_eq!(&once, &twice);
            if !once.is_zero() {
                prop_assert!((once.norm() - 1.0).abs() <= 1e-5);
            }
        }
    }
}
