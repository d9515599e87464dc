//! Dense parameter vectors.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};

/// Dense real vector holding model parameters, dual variables and every
/// other per-client or server iterate.
///
/// Binary arithmetic requires equal dimensions and panics otherwise; the
/// public entry points of the library check dimensions up front and return
/// [`Error::DimensionMismatch`] instead.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn from_elem(dim: usize, value: f64) -> Self {
        ModelVector(vec![value; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                found: self.len(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context,
                round: None,
                client: None,
            })
        }
    }

    pub fn dot(&self, other: &ModelVector) -> f64 {
        assert_eq!(self.len(), other.len(), "dimension mismatch in dot");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Largest absolute entry.
    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn distance(&self, other: &ModelVector) -> f64 {
        assert_eq!(self.len(), other.len(), "dimension mismatch in distance");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &ModelVector) -> f64 {
        assert_eq!(self.len(), other.len(), "dimension mismatch in max_abs_diff");
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &ModelVector) {
        assert_eq!(self.len(), x.len(), "dimension mismatch in axpy");
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += alpha * v;
        }
    }

    pub fn scale_mut(&mut self, factor: f64) {
        for v in &mut self.0 {
            *v *= factor;
        }
    }

    pub fn scaled(&self, factor: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|v| v * factor).collect())
    }

    /// Elementwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ModelVector {
        ModelVector(self.0.iter().map(|&v| f(v)).collect())
    }

    /// `a * self + b * other`, evaluated entrywise in a single pass.
    pub fn lincomb(&self, a: f64, other: &ModelVector, b: f64) -> ModelVector {
        assert_eq!(self.len(), other.len(), "dimension mismatch in lincomb");
        ModelVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(v: Vec<f64>) -> Self {
        ModelVector(v)
    }
}

impl From<&[f64]> for ModelVector {
    fn from(v: &[f64]) -> Self {
        ModelVector(v.to_vec())
    }
}

impl Index<usize> for ModelVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ModelVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &ModelVector {
    type Output = ModelVector;
    fn add(self, rhs: &ModelVector) -> ModelVector {
        self.lincomb(1.0, rhs, 1.0)
    }
}

impl Sub for &ModelVector {
    type Output = ModelVector;
    fn sub(self, rhs: &ModelVector) -> ModelVector {
        assert_eq!(self.len(), rhs.len(), "dimension mismatch in sub");
        ModelVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &ModelVector {
    type Output = ModelVector;
    fn mul(self, rhs: f64) -> ModelVector {
        self.scaled(rhs)
    }
}

/// Pairwise (cascade) sum of equally sized vectors in the given order.
///
/// The split points depend only on the number of terms, so the result is
/// bit-reproducible for a fixed input order.
pub fn pairwise_sum(terms: &[&ModelVector], dim: usize) -> ModelVector {
    match terms.len() {
        0 => ModelVector::zeros(dim),
        1 => terms[0].clone(),
        2 => terms[0] + terms[1],
        n => {
            let mid = n / 2;
            let left = pairwise_sum(&terms[..mid], dim);
            let right = pairwise_sum(&terms[mid..], dim);
            &left + &right
        }
    }
}

/// Mean of the vectors, summed pairwise in index order.
pub fn pairwise_mean<'a, I>(terms: I, dim: usize) -> ModelVector
where
    I: IntoIterator<Item = &'a ModelVector>,
{
    let terms: Vec<&ModelVector> = terms.into_iter().collect();
    let n = terms.len();
    let mut sum = pairwise_sum(&terms, dim);
    if n > 0 {
        sum.scale_mut(1.0 / n as f64);
    }
    sum
}
