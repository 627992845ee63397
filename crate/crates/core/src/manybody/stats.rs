//! Marginals of the responsibility tensor `M^[k]` that the closed-form
//! updates consume. `M^[k]` itself is never stored.

use ndarray::{Array2, Array3, ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::models::{Component, ComponentKind, ComponentSpec};
use crate::tensor::{DenseTensor, Shape};

/// `S^(d)[i_d, r] = Σ_{i\d} M_ir`, `s[r] = Σ_i M_ir`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpStats {
    pub modes: Vec<Array2<f64>>,
    pub rank_mass: Vec<f64>,
    pub total: f64,
}

/// Core marginal `Σ_i M_ir` and factor marginals `Σ_{i\d, r\d} M_ir`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerStats {
    pub core: ArrayD<f64>,
    pub modes: Vec<Array2<f64>>,
    pub total: f64,
}

impl TuckerStats {
    /// `Σ_{i, r\d} M` as a function of `r_d`.
    pub fn denominators(&self, d: usize) -> Vec<f64> {
        self.modes[d].columns().into_iter().map(|c| c.sum()).collect()
    }
}

/// Per-core numerators `Σ_{i\d, r\{d-1,d}} M`, shaped like the cores.
#[derive(Debug, Clone, PartialEq)]
pub struct TtStats {
    pub numerators: Vec<Array3<f64>>,
    pub total: f64,
}

impl TtStats {
    /// `Σ_{i, r\d} M` for core `d`, indexed by its right rank `r_d`.
    pub fn denominators(&self, d: usize) -> Vec<f64> {
        let n = &self.numerators[d];
        let (ra, ni, rb) = n.dim();
        let mut out = vec![0.0; rb];
        for a in 0..ra {
            for i in 0..ni {
                for (b, o) in out.iter_mut().enumerate() {
                    *o += n[[a, i, b]];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComponentStats {
    Cp(CpStats),
    Tucker(TuckerStats),
    Tt(TtStats),
    Background { total: f64 },
}

impl ComponentStats {
    /// Zeroed accumulators sized for `c`.
    pub fn zeros_for(c: &Component) -> Self {
        match c {
            Component::Cp(cp) => ComponentStats::Cp(CpStats {
                modes: cp.factors().iter().map(|a| Array2::zeros(a.raw_dim())).collect(),
                rank_mass: vec![0.0; cp.rank()],
                total: 0.0,
            }),
            Component::Tucker(t) => ComponentStats::Tucker(TuckerStats {
                core: ArrayD::zeros(t.core().raw_dim()),
                modes: t.factors().iter().map(|a| Array2::zeros(a.raw_dim())).collect(),
                total: 0.0,
            }),
            Component::Tt(t) => ComponentStats::Tt(TtStats {
                numerators: t.cores().iter().map(|g| Array3::zeros(g.raw_dim())).collect(),
                total: 0.0,
            }),
            Component::Background(_) => ComponentStats::Background { total: 0.0 },
        }
    }

    /// `m_k = Σ_{i, r} M^[k]`.
    pub fn total(&self) -> f64 {
        match self {
            ComponentStats::Cp(s) => s.total,
            ComponentStats::Tucker(s) => s.total,
            ComponentStats::Tt(s) => s.total,
            ComponentStats::Background { total } => *total,
        }
    }

    pub(crate) fn all_finite(&self) -> bool {
        let fin = |v: &f64| v.is_finite();
        match self {
            ComponentStats::Cp(s) => {
                s.total.is_finite() && s.rank_mass.iter().all(fin) && s.modes.iter().all(|a| a.iter().all(fin))
            }
            ComponentStats::Tucker(s) => {
                s.total.is_finite() && s.core.iter().all(fin) && s.modes.iter().all(|a| a.iter().all(fin))
            }
            ComponentStats::Tt(s) => s.total.is_finite() && s.numerators.iter().all(|a| a.iter().all(fin)),
            ComponentStats::Background { total } => total.is_finite(),
        }
    }

    /// Statistics of a dense `M` laid out as `I_1 × ... × I_D × (rank modes)`.
    ///
    /// Rank modes follow the structure: CP `R`, Tucker `R_1..R_D`, TT
    /// `R_1..R_{D-1}`, background none.
    pub fn from_dense(spec: &ComponentSpec, shape: &Shape, m: &DenseTensor) -> Result<Self> {
        spec.validate(shape)?;
        let d = shape.ndim();
        let expected: Vec<usize> = shape.dims().iter().chain(&spec.ranks).copied().collect();
        if m.shape().dims() != expected.as_slice() {
            return Err(Error::domain(format!(
                "dense responsibilities have shape {}, expected {:?}",
                m.shape(),
                expected
            )));
        }
        let total: f64 = m.values().iter().sum();
        Ok(match spec.kind {
            ComponentKind::Background => ComponentStats::Background { total },
            ComponentKind::Cp => {
                let r = spec.ranks[0];
                let mut modes: Vec<Array2<f64>> =
                    shape.dims().iter().map(|&n| Array2::zeros((n, r))).collect();
                let mut rank_mass = vec![0.0; r];
                for (flat, &v) in m.values().iter().enumerate() {
                    let full = m.shape().unflatten(flat);
                    let rr = full[d];
                    rank_mass[rr] += v;
                    for (k, mode) in modes.iter_mut().enumerate() {
                        mode[[full[k], rr]] += v;
                    }
                }
                ComponentStats::Cp(CpStats {
                    modes,
                    rank_mass,
                    total,
                })
            }
            ComponentKind::Tucker => {
                let mut core = ArrayD::zeros(IxDyn(&spec.ranks));
                let mut modes: Vec<Array2<f64>> = shape
                    .dims()
                    .iter()
                    .zip(&spec.ranks)
                    .map(|(&n, &r)| Array2::zeros((n, r)))
                    .collect();
                for (flat, &v) in m.values().iter().enumerate() {
                    let full = m.shape().unflatten(flat);
                    core[IxDyn(&full[d..])] += v;
                    for (k, mode) in modes.iter_mut().enumerate() {
                        mode[[full[k], full[d + k]]] += v;
                    }
                }
                ComponentStats::Tucker(TuckerStats { core, modes, total })
            }
            ComponentKind::Tt => {
                let ranks = &spec.ranks;
                let mut numerators: Vec<Array3<f64>> = (0..d)
                    .map(|k| {
                        let left = if k == 0 { 1 } else { ranks[k - 1] };
                        let right = if k + 1 == d { 1 } else { ranks[k] };
                        Array3::zeros((left, shape.dim(k), right))
                    })
                    .collect();
                for (flat, &v) in m.values().iter().enumerate() {
                    let full = m.shape().unflatten(flat);
                    let r = &full[d..];
                    for (k, num) in numerators.iter_mut().enumerate() {
                        let a = if k == 0 { 0 } else { r[k - 1] };
                        let b = if k + 1 == d { 0 } else { r[k] };
                        num[[a, full[k], b]] += v;
                    }
                }
                ComponentStats::Tt(TtStats { numerators, total })
            }
        })
    }
}

/// Statistics for every component of a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub components: Vec<ComponentStats>,
}

impl SufficientStats {
    pub fn masses(&self) -> Vec<f64> {
        self.components.iter().map(ComponentStats::total).collect()
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        for (k, s) in self.components.iter().enumerate() {
            if !s.all_finite() {
                return Err(Error::internal(format!(
                    "non-finite sufficient statistics for component {k}"
                )));
            }
        }
        Ok(())
    }
}
