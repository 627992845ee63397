use ndarray::{Array2, ArrayD, Dimension, IxDyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Largest core (number of rank tuples) the responsibilities will enumerate.
pub const MAX_CORE_SIZE: usize = 4096;
/// Largest number of modes accepted for a Tucker component.
pub const MAX_MODES: usize = 8;

/// Dense core contracted with one factor per mode.
///
/// Stored in the scaled convention: the core sums to one and every factor
/// column sums to one, so the component is normalized by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerComponent {
    core: ArrayD<f64>,
    factors: Vec<Array2<f64>>,
}

impl TuckerComponent {
    pub fn from_parts(core: ArrayD<f64>, factors: Vec<Array2<f64>>) -> Result<Self> {
        if core.ndim() != factors.len() {
            return Err(Error::domain(format!(
                "Tucker core has {} modes but {} factors were given",
                core.ndim(),
                factors.len()
            )));
        }
        for (d, a) in factors.iter().enumerate() {
            if a.ncols() != core.shape()[d] {
                return Err(Error::domain(format!(
                    "Tucker factor {d} has {} columns, core mode has {}",
                    a.ncols(),
                    core.shape()[d]
                )));
            }
        }
        let bad = |v: &f64| !(*v >= 0.0) || !v.is_finite();
        if core.iter().any(bad) || factors.iter().any(|a| a.iter().any(bad)) {
            return Err(Error::domain("Tucker parameters must be finite and nonnegative"));
        }
        Ok(TuckerComponent { core, factors })
    }

    pub(crate) fn random(shape: &Shape, ranks: &[usize], rng: &mut impl Rng) -> Self {
        let core = ArrayD::from_shape_simple_fn(IxDyn(ranks), || rng.random::<f64>());
        let factors = shape
            .dims()
            .iter()
            .zip(ranks)
            .map(|(&n, &r)| Array2::from_shape_simple_fn((n, r), || rng.random::<f64>()))
            .collect();
        let mut c = TuckerComponent { core, factors };
        c.normalize();
        c
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.shape()
    }

    pub fn core(&self) -> &ArrayD<f64> {
        &self.core
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    /// Moves factor column sums into the core, then normalizes the core.
    pub fn normalize(&mut self) {
        for (d, a) in self.factors.iter_mut().enumerate() {
            for (r, mut col) in a.columns_mut().into_iter().enumerate() {
                let s = col.sum();
                if s > 0.0 {
                    col.mapv_inplace(|v| v / s);
                    self.core
                        .index_axis_mut(ndarray::Axis(d), r)
                        .mapv_inplace(|g| g * s);
                }
            }
        }
        let total = self.core.sum();
        self.core.mapv_inplace(|g| g / total);
    }

    /// Contracts the core with `A^(d)[i_d, :]` one mode at a time.
    pub fn eval(&self, idx: &[usize]) -> f64 {
        let mut buf: Vec<f64> = self.core.iter().copied().collect();
        let mut len = buf.len();
        for (a, &i) in self.factors.iter().zip(idx) {
            let row = a.row(i);
            let r = row.len();
            let stride = len / r;
            for j in 0..stride {
                let mut acc = 0.0;
                for (k, &v) in row.iter().enumerate() {
                    acc += v * buf[k * stride + j];
                }
                buf[j] = acc;
            }
            len = stride;
        }
        buf[0]
    }

    /// Brute-force `Σ_r G_r Π_d A^(d)[i_d, r_d]` over every rank tuple.
    pub fn eval_enumerated(&self, idx: &[usize]) -> f64 {
        let mut total = 0.0;
        self.for_each_term(idx, |_, q| total += q);
        total
    }

    /// Calls `f(rank_tuple, Q_ir)` for every rank tuple in row-major order.
    pub(crate) fn for_each_term(&self, idx: &[usize], mut f: impl FnMut(&[usize], f64)) {
        let ranks = self.ranks().to_vec();
        let rows: Vec<_> = self.factors.iter().zip(idx).map(|(a, &i)| a.row(i)).collect();
        let mut r = vec![0usize; ranks.len()];
        for &g in self.core.iter() {
            let mut q = g;
            for (row, &rd) in rows.iter().zip(&r) {
                q *= row[rd];
            }
            f(&r, q);
            for d in (0..r.len()).rev() {
                r[d] += 1;
                if r[d] < ranks[d] {
                    break;
                }
                r[d] = 0;
            }
        }
    }

    pub fn total_mass(&self) -> f64 {
        let sums: Vec<Vec<f64>> = self
            .factors
            .iter()
            .map(|a| a.columns().into_iter().map(|c| c.sum()).collect())
            .collect();
        self.core
            .indexed_iter()
            .map(|(r, &g)| {
                let r = r.slice();
                g * sums.iter().zip(r).map(|(s, &k)| s[k]).product::<f64>()
            })
            .sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.core.len() + self.factors.iter().map(|a| a.len()).sum::<usize>()
    }
}
