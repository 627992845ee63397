//! Synthetic datasets: random low-rank distributions mixed with a uniform
//! background, and a discretized two-moons set with injected noise.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BackgroundComponent, Component, ComponentKind, CpComponent, MixtureModel, TtComponent};
use crate::tensor::{DenseTensor, MultiIndex, Shape};

/// A random CP or TT distribution of a given rank, mixed with a uniform
/// background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: ComponentKind,
    pub shape: Shape,
    pub rank: usize,
    pub background_weight: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.kind, ComponentKind::Cp | ComponentKind::Tt) {
            return Err(Error::domain(format!(
                "synthetic data supports cp and tt, not {}",
                self.kind
            )));
        }
        if self.rank == 0 {
            return Err(Error::domain("synthetic rank must be positive"));
        }
        if !(0.0..=1.0).contains(&self.background_weight) {
            return Err(Error::domain(format!(
                "background weight must lie in [0, 1], got {}",
                self.background_weight
            )));
        }
        Ok(())
    }
}

fn abs_normal(rng: &mut impl Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z.abs()
}

/// Draws the true model: factor entries are `|N(0, 1)|`, the low-rank
/// component is normalized and mixed with the background at the given
/// weight. Returns the model and an exact sampler over it.
pub fn synth_lowrank(spec: &SyntheticSpec) -> Result<(MixtureModel, Sampler)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dims = spec.shape.dims();
    let low_rank = match spec.kind {
        ComponentKind::Cp => {
            let factors = dims
                .iter()
                .map(|&n| Array2::from_shape_simple_fn((n, spec.rank), || abs_normal(&mut rng)))
                .collect();
            let mut cp = CpComponent::from_factors(factors)?;
            cp.rescale_to_unit_mass();
            Component::Cp(cp)
        }
        _ => {
            let d = dims.len();
            let cores = dims
                .iter()
                .enumerate()
                .map(|(k, &n)| {
                    let a = if k == 0 { 1 } else { spec.rank };
                    let b = if k + 1 == d { 1 } else { spec.rank };
                    Array3::from_shape_simple_fn((a, n, b), || abs_normal(&mut rng))
                })
                .collect();
            Component::Tt(TtComponent::from_cores(cores)?)
        }
    };
    let bg = spec.background_weight;
    let model = if bg == 0.0 {
        MixtureModel::new(spec.shape.clone(), vec![low_rank], vec![1.0])?
    } else {
        MixtureModel::new(
            spec.shape.clone(),
            vec![low_rank, Component::Background(BackgroundComponent::new(&spec.shape))],
            vec![1.0 - bg, bg],
        )?
    };
    let sampler = Sampler::from_model(&model)?;
    Ok((model, sampler))
}

/// Inverse-CDF sampler over a dense distribution.
#[derive(Debug, Clone)]
pub struct Sampler {
    shape: Shape,
    cdf: Vec<f64>,
}

impl Sampler {
    /// Materializes the model densely; refuses shapes beyond the dense
    /// guard.
    pub fn from_model(m: &MixtureModel) -> Result<Self> {
        Self::from_dense(&m.materialize_dense()?)
    }

    pub fn from_dense(p: &DenseTensor) -> Result<Self> {
        let total = p.sum();
        if !(total > 0.0) {
            return Err(Error::domain("cannot sample from a zero tensor"));
        }
        let mut acc = 0.0;
        let cdf = p
            .values()
            .iter()
            .map(|v| {
                acc += v / total;
                acc
            })
            .collect();
        Ok(Sampler {
            shape: p.shape().clone(),
            cdf,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn draw(&self, rng: &mut impl Rng) -> MultiIndex {
        let last = *self.cdf.last().expect("nonempty");
        let u: f64 = rng.random::<f64>() * last;
        let flat = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        self.shape.unflatten(flat)
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<MultiIndex> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    /// `n` draws from a stream determined by `seed` alone. The stream is
    /// separate from the one that drew the model parameters.
    pub fn sample_seeded(&self, n: usize, seed: u64) -> Vec<MultiIndex> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        self.sample(n, &mut rng)
    }
}

/// Two interleaved half circles discretized onto a `grid × grid` lattice,
/// with the class label as a third mode of size two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoonSpec {
    pub samples: usize,
    pub noise: f64,
    pub grid: usize,
    /// Number of samples whose label is flipped.
    pub flipped: usize,
    /// Number of extra points placed uniformly in the corner regions.
    pub outliers: usize,
    pub seed: u64,
}

impl Default for MoonSpec {
    fn default() -> Self {
        MoonSpec {
            samples: 5000,
            noise: 0.07,
            grid: 90,
            flipped: 0,
            outliers: 0,
            seed: 0,
        }
    }
}

const X_RANGE: (f64, f64) = (-1.6, 2.6);
const Y_RANGE: (f64, f64) = (-1.1, 1.6);

fn bin(v: f64, (lo, hi): (f64, f64), grid: usize) -> usize {
    let b = ((v - lo) / (hi - lo) * grid as f64).floor();
    b.clamp(0.0, (grid - 1) as f64) as usize
}

/// Side length of each square corner region: 2/9 of the grid.
pub fn corner_width(grid: usize) -> usize {
    ((grid as f64) * 2.0 / 9.0).round().max(1.0) as usize
}

/// Whether `(x, y)` lies in one of the four corner squares.
pub fn in_corner_region(x: usize, y: usize, grid: usize) -> bool {
    let w = corner_width(grid);
    let edge = |v: usize| v < w || v >= grid - w;
    edge(x) && edge(y)
}

pub fn half_moons(spec: &MoonSpec) -> Result<(Shape, Vec<MultiIndex>)> {
    if spec.grid < 2 || spec.samples < 2 {
        return Err(Error::domain("half moons need a grid of at least 2 and 2 samples"));
    }
    if spec.flipped > spec.samples {
        return Err(Error::domain("cannot flip more labels than there are samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::domain(format!("noise: {e}")))?;
    let outer = spec.samples / 2;
    let inner = spec.samples - outer;
    let linspace = |k: usize, n: usize| if n > 1 { PI * k as f64 / (n - 1) as f64 } else { 0.0 };
    let mut samples = Vec::with_capacity(spec.samples + spec.outliers);
    for k in 0..outer {
        let t = linspace(k, outer);
        let x = t.cos() + normal.sample(&mut rng);
        let y = t.sin() + normal.sample(&mut rng);
        samples.push(MultiIndex(vec![bin(x, X_RANGE, spec.grid), bin(y, Y_RANGE, spec.grid), 0]));
    }
    for k in 0..inner {
        let t = linspace(k, inner);
        let x = 1.0 - t.cos() + normal.sample(&mut rng);
        let y = 1.0 - t.sin() - 0.5 + normal.sample(&mut rng);
        samples.push(MultiIndex(vec![bin(x, X_RANGE, spec.grid), bin(y, Y_RANGE, spec.grid), 1]));
    }
    for k in sample_indices(&mut rng, samples.len(), spec.flipped) {
        samples[k].0[2] ^= 1;
    }
    let w = corner_width(spec.grid);
    for _ in 0..spec.outliers {
        let corner = rng.random_range(0..4usize);
        let mut coord = |high: bool| {
            let off = rng.random_range(0..w);
            if high {
                spec.grid - w + off
            } else {
                off
            }
        };
        let x = coord(corner & 1 == 1);
        let y = coord(corner & 2 == 2);
        let label = rng.random_range(0..2usize);
        samples.push(MultiIndex(vec![x, y, label]));
    }
    let shape = Shape::new(vec![spec.grid, spec.grid, 2])?;
    Ok((shape, samples))
}
