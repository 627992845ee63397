use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{MultiIndex, Shape};

/// Tensor train with cores `G^(d)` of shape `R_{d-1} × I_d × R_d`,
/// `R_0 = R_D = 1`.
///
/// Cores are kept in the scaled convention: for each `r_d` the slice
/// `G^(d)[:, :, r_d]` sums to one over `(r_{d-1}, i_d)`. The train is then a
/// normalized distribution without any global rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct TtComponent {
    cores: Vec<Array3<f64>>,
}

impl TtComponent {
    /// Wraps raw cores and applies the scaled-core sweep, so the result is a
    /// normalized distribution proportional to the input train.
    pub fn from_cores(cores: Vec<Array3<f64>>) -> Result<Self> {
        Self::check_cores(&cores)?;
        let mut c = TtComponent { cores };
        c.sweep_normalize()?;
        Ok(c)
    }

    /// Wraps cores that are already in the scaled convention.
    pub(crate) fn from_scaled_cores(cores: Vec<Array3<f64>>) -> Self {
        TtComponent { cores }
    }

    /// Wraps cores as given after the structural checks, without rescaling.
    pub(crate) fn from_cores_unscaled(cores: Vec<Array3<f64>>) -> Result<Self> {
        Self::check_cores(&cores)?;
        Ok(TtComponent { cores })
    }

    fn check_cores(cores: &[Array3<f64>]) -> Result<()> {
        if cores.is_empty() {
            return Err(Error::domain("tensor train needs at least one core"));
        }
        let mut left = 1;
        for (d, g) in cores.iter().enumerate() {
            let (a, _, b) = g.dim();
            if a != left {
                return Err(Error::domain(format!(
                    "core {d} has left rank {a}, expected {left}"
                )));
            }
            if b == 0 {
                return Err(Error::domain(format!("core {d} has zero right rank")));
            }
            if g.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::domain(format!("core {d} has negative or non-finite entries")));
            }
            left = b;
        }
        if left != 1 {
            return Err(Error::domain(format!("last core has right rank {left}, expected 1")));
        }
        Ok(())
    }

    pub(crate) fn random(shape: &Shape, ranks: &[usize], rng: &mut impl Rng) -> Self {
        let d = shape.ndim();
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let left = if k == 0 { 1 } else { ranks[k - 1] };
            let right = if k + 1 == d { 1 } else { ranks[k] };
            cores.push(Array3::from_shape_simple_fn((left, shape.dim(k), right), || {
                rng.random::<f64>()
            }));
        }
        let mut c = TtComponent { cores };
        c.sweep_normalize()
            .expect("uniform draws on (0, 1) give positive slice sums");
        c
    }

    /// `g_d[r_d] = Σ_{r_{d-1}, i_d} G^(d) g_{d-1}[r_{d-1}]`, then
    /// `G~^(d) = G^(d) g_{d-1}[r_{d-1}] / g_d[r_d]`.
    fn sweep_normalize(&mut self) -> Result<()> {
        let mut g_prev = vec![1.0];
        for (d, core) in self.cores.iter_mut().enumerate() {
            let (ra, ni, rb) = core.dim();
            let mut g = vec![0.0; rb];
            for a in 0..ra {
                for i in 0..ni {
                    for b in 0..rb {
                        g[b] += core[[a, i, b]] * g_prev[a];
                    }
                }
            }
            if let Some(b) = g.iter().position(|&s| !(s > 0.0)) {
                return Err(Error::domain(format!("core {d}: rank slice {b} carries no mass")));
            }
            for a in 0..ra {
                for i in 0..ni {
                    for b in 0..rb {
                        core[[a, i, b]] *= g_prev[a] / g[b];
                    }
                }
            }
            g_prev = g;
        }
        Ok(())
    }

    pub fn ndim(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[Array3<f64>] {
        &self.cores
    }

    /// Inner ranks `(R_1, ..., R_{D-1})`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores[..self.cores.len() - 1]
            .iter()
            .map(|g| g.dim().2)
            .collect()
    }

    /// Left-to-right vector-matrix chain.
    pub fn eval(&self, idx: &[usize]) -> f64 {
        let mut v = vec![1.0];
        for (g, &i) in self.cores.iter().zip(idx) {
            v = step_right(g, i, &v);
        }
        v[0]
    }

    pub fn total_mass(&self) -> f64 {
        let mut v = vec![1.0];
        for g in &self.cores {
            let (ra, ni, rb) = g.dim();
            let mut next = vec![0.0; rb];
            for a in 0..ra {
                for i in 0..ni {
                    for b in 0..rb {
                        next[b] += v[a] * g[[a, i, b]];
                    }
                }
            }
            v = next;
        }
        v[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.cores.iter().map(|g| g.len()).sum()
    }

    /// Prefix and suffix chains at one index, written into reusable buffers.
    pub(crate) fn chain_into(&self, idx: &[usize], chain: &mut Chain) {
        let d = self.cores.len();
        chain.prefix.resize(d + 1, Vec::new());
        chain.suffix.resize(d + 1, Vec::new());
        chain.prefix[0].clear();
        chain.prefix[0].push(1.0);
        for k in 0..d {
            let (head, tail) = chain.prefix.split_at_mut(k + 1);
            step_right_into(&self.cores[k], idx[k], &head[k], &mut tail[0]);
        }
        chain.suffix[d].clear();
        chain.suffix[d].push(1.0);
        for k in (0..d).rev() {
            let (head, tail) = chain.suffix.split_at_mut(k + 1);
            step_left_into(&self.cores[k], idx[k], &tail[0], &mut head[k]);
        }
    }
}

fn step_right(g: &Array3<f64>, i: usize, v: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    step_right_into(g, i, v, &mut out);
    out
}

fn step_right_into(g: &Array3<f64>, i: usize, v: &[f64], out: &mut Vec<f64>) {
    let (ra, _, rb) = g.dim();
    out.clear();
    out.resize(rb, 0.0);
    for a in 0..ra {
        let va = v[a];
        for b in 0..rb {
            out[b] += va * g[[a, i, b]];
        }
    }
}

fn step_left_into(g: &Array3<f64>, i: usize, v: &[f64], out: &mut Vec<f64>) {
    let (ra, _, rb) = g.dim();
    out.clear();
    out.resize(ra, 0.0);
    for a in 0..ra {
        let mut acc = 0.0;
        for b in 0..rb {
            acc += g[[a, i, b]] * v[b];
        }
        out[a] = acc;
    }
}

/// Prefix vectors `G^(→d)` and suffix vectors `G^(d←)`, `d = 0..=D`, for one
/// index. `prefix[0] = suffix[D] = [1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chain {
    pub prefix: Vec<Vec<f64>>,
    pub suffix: Vec<Vec<f64>>,
}

impl Chain {
    /// Model value at the index, read from the end of the prefix chain.
    pub fn value(&self) -> f64 {
        self.prefix.last().map_or(0.0, |v| v[0])
    }

    /// Same value read from the start of the suffix chain.
    pub fn value_from_suffix(&self) -> f64 {
        self.suffix.first().map_or(0.0, |v| v[0])
    }
}

/// Prefix/suffix chains for every index of `support`.
#[derive(Debug, Clone, PartialEq)]
pub struct TtCumulants {
    pub chains: Vec<Chain>,
}

/// Computes prefix/suffix chains for each index in `support` in
/// `O(D R^2)` per index.
pub fn tt_cumulants(c: &TtComponent, support: &[MultiIndex]) -> TtCumulants {
    let chains = support
        .iter()
        .map(|idx| {
            let mut chain = Chain::default();
            c.chain_into(idx, &mut chain);
            chain
        })
        .collect();
    TtCumulants { chains }
}
