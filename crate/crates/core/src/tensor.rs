//! Shapes, multi-indices and the sparse empirical tensor built from
//! categorical samples.
//!
//! Indices are zero-based throughout the library. The empirical tensor keeps
//! its support sorted lexicographically so every reduction over it runs in
//! the same order on every run.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category counts `(I_1, ..., I_D)`, one per feature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::domain("shape must have at least one mode"));
        }
        if let Some(d) = dims.iter().position(|&n| n == 0) {
            return Err(Error::domain(format!("mode {d} has zero categories")));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    pub fn dim(&self, d: usize) -> usize {
        self.0[d]
    }

    /// `log |Omega_I|`, finite even when the product overflows.
    pub fn log_cardinality(&self) -> f64 {
        log_cardinality(self)
    }

    /// `|Omega_I|` if it fits in a `usize`.
    pub fn cardinality(&self) -> Option<usize> {
        self.0.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n))
    }

    pub fn contains(&self, idx: &[usize]) -> bool {
        idx.len() == self.ndim() && idx.iter().zip(&self.0).all(|(&i, &n)| i < n)
    }

    pub fn check_index(&self, idx: &[usize]) -> Result<()> {
        if idx.len() != self.ndim() {
            return Err(Error::domain(format!(
                "index has {} coordinates, shape has {} modes",
                idx.len(),
                self.ndim()
            )));
        }
        for (d, (&i, &n)) in idx.iter().zip(&self.0).enumerate() {
            if i >= n {
                return Err(Error::domain(format!(
                    "feature {d}: value {i} out of range (expected < {n})"
                )));
            }
        }
        Ok(())
    }

    /// Row-major flat offset of `idx`.
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.0).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Inverse of [`Shape::flat_index`].
    pub fn unflatten(&self, mut flat: usize) -> MultiIndex {
        let mut coords = vec![0; self.ndim()];
        for d in (0..self.ndim()).rev() {
            coords[d] = flat % self.0[d];
            flat /= self.0[d];
        }
        MultiIndex(coords)
    }

    /// Iterates every index of the shape in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        let total = self.cardinality().unwrap_or(usize::MAX);
        (0..total).map(move |f| self.unflatten(f))
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|n| n.to_string()).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// `Σ_d log I_d`.
pub fn log_cardinality(shape: &Shape) -> f64 {
    shape.dims().iter().map(|&n| (n as f64).ln()).sum()
}

/// A zero-based coordinate tuple `(i_1, ..., i_D)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn new(coords: Vec<usize>) -> Self {
        MultiIndex(coords)
    }
}

impl Deref for MultiIndex {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(v: Vec<usize>) -> Self {
        MultiIndex(v)
    }
}

impl<const N: usize> From<[usize; N]> for MultiIndex {
    fn from(v: [usize; N]) -> Self {
        MultiIndex(v.to_vec())
    }
}

/// Normalized sparse count tensor over the observed support.
///
/// Entries are strictly positive and sum to one. `sample_count` is the number
/// of samples the tensor was built from (for dense inputs, the number of
/// positive cells).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTensor {
    shape: Shape,
    indices: Vec<MultiIndex>,
    weights: Vec<f64>,
    sample_count: usize,
}

impl EmpiricalTensor {
    /// Builds the empirical distribution of `samples`: each distinct index
    /// gets weight `count / N`.
    pub fn from_samples(samples: &[MultiIndex], shape: &Shape) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("cannot build an empirical tensor from zero samples"));
        }
        let mut counts: BTreeMap<&MultiIndex, u64> = BTreeMap::new();
        for (n, s) in samples.iter().enumerate() {
            shape
                .check_index(s)
                .map_err(|e| Error::domain(format!("sample {n}: {e}")))?;
            *counts.entry(s).or_insert(0) += 1;
        }
        let total = samples.len() as f64;
        let (indices, weights) = counts
            .into_iter()
            .map(|(idx, c)| (idx.clone(), c as f64 / total))
            .unzip();
        Ok(EmpiricalTensor {
            shape: shape.clone(),
            indices,
            weights,
            sample_count: samples.len(),
        })
    }

    /// Sparse view of a dense nonnegative tensor, normalized to unit mass.
    pub fn from_dense(dense: &DenseTensor) -> Result<Self> {
        let normalized = normalize_dense(dense)?;
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for (flat, &v) in normalized.values().iter().enumerate() {
            if v > 0.0 {
                indices.push(normalized.shape().unflatten(flat));
                weights.push(v);
            }
        }
        let sample_count = indices.len();
        Ok(EmpiricalTensor {
            shape: dense.shape().clone(),
            indices,
            weights,
            sample_count,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Observed support, sorted lexicographically.
    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.indices.iter().zip(self.weights.iter().copied())
    }

    /// Weight at `idx`, zero off the support.
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.indices
            .binary_search_by(|probe| probe.0.as_slice().cmp(idx))
            .map(|k| self.weights[k])
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Convenience wrapper over [`EmpiricalTensor::from_samples`].
pub fn build_empirical(samples: &[MultiIndex], shape: &Shape) -> Result<EmpiricalTensor> {
    EmpiricalTensor::from_samples(samples, shape)
}

/// Small dense nonnegative tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        let expected = shape
            .cardinality()
            .ok_or_else(|| Error::domain(format!("shape {shape} is too large for a dense tensor")))?;
        if values.len() != expected {
            return Err(Error::domain(format!(
                "dense tensor of shape {shape} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!(
                "dense value at flat offset {k} is negative or not finite: {}",
                values[k]
            )));
        }
        Ok(DenseTensor { shape, values })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.shape.flat_index(idx)]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Rescales a dense tensor to unit mass.
pub fn normalize_dense(t: &DenseTensor) -> Result<DenseTensor> {
    let total = t.sum();
    if total <= 0.0 {
        return Err(Error::domain("cannot normalize an all-zero tensor"));
    }
    Ok(DenseTensor {
        shape: t.shape.clone(),
        values: t.values.iter().map(|v| v / total).collect(),
    })
}
