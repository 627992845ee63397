use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Sum of `R` rank-one terms, `P_i = Σ_r Π_d A^(d)[i_d, r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpComponent {
    factors: Vec<Array2<f64>>,
}

impl CpComponent {
    /// Wraps factor matrices (`I_d × R` each) without normalizing them.
    pub fn from_factors(factors: Vec<Array2<f64>>) -> Result<Self> {
        let rank = factors
            .first()
            .map(|a| a.ncols())
            .ok_or_else(|| Error::domain("CP component needs at least one factor"))?;
        if rank == 0 {
            return Err(Error::domain("CP rank must be positive"));
        }
        for (d, a) in factors.iter().enumerate() {
            if a.ncols() != rank {
                return Err(Error::domain(format!(
                    "CP factor {d} has {} columns, expected {rank}",
                    a.ncols()
                )));
            }
            if a.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::domain(format!("CP factor {d} has negative or non-finite entries")));
            }
        }
        Ok(CpComponent { factors })
    }

    pub(crate) fn random(shape: &Shape, rank: usize, rng: &mut impl Rng) -> Self {
        let factors = shape
            .dims()
            .iter()
            .map(|&n| Array2::from_shape_simple_fn((n, rank), || rng.random::<f64>()))
            .collect();
        let mut c = CpComponent { factors };
        c.rescale_to_unit_mass();
        c
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    /// Per-rank products `Π_d A^(d)[i_d, r]` written into `out`.
    pub fn rank_terms(&self, idx: &[usize], out: &mut [f64]) {
        out.fill(1.0);
        for (a, &i) in self.factors.iter().zip(idx) {
            let row = a.row(i);
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o *= v;
            }
        }
    }

    pub fn eval(&self, idx: &[usize]) -> f64 {
        let mut terms = vec![0.0; self.rank()];
        self.rank_terms(idx, &mut terms);
        terms.iter().sum()
    }

    pub fn total_mass(&self) -> f64 {
        let mut per_rank = vec![1.0; self.rank()];
        for a in &self.factors {
            for (r, col) in a.columns().into_iter().enumerate() {
                per_rank[r] *= col.sum();
            }
        }
        per_rank.iter().sum()
    }

    /// Scales every factor by `mass^(-1/D)`.
    pub fn rescale_to_unit_mass(&mut self) {
        let mass = self.total_mass();
        let scale = mass.powf(-1.0 / self.factors.len() as f64);
        for a in &mut self.factors {
            a.mapv_inplace(|v| v * scale);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.factors.iter().map(|a| a.len()).sum()
    }
}
