//! Low-rank component parameterizations and their convex mixture.

mod cp;
mod tt;
mod tucker;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, EmpiricalTensor, MultiIndex, Shape};

pub use cp::CpComponent;
pub use tt::{tt_cumulants, Chain, TtComponent, TtCumulants};
pub use tucker::TuckerComponent;

/// Largest `|Omega_I|` that will be materialized densely.
pub const MAX_DENSE_CELLS: usize = 1_000_000;

/// Weights below this are floored to zero after every update.
pub const WEIGHT_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Cp,
    Tucker,
    Tt,
    Background,
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComponentKind::Cp => "cp",
            ComponentKind::Tucker => "tucker",
            ComponentKind::Tt => "tt",
            ComponentKind::Background => "background",
        })
    }
}

impl FromStr for ComponentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cp" => Ok(ComponentKind::Cp),
            "tucker" => Ok(ComponentKind::Tucker),
            "tt" | "train" => Ok(ComponentKind::Tt),
            "background" | "bg" | "b" => Ok(ComponentKind::Background),
            other => Err(Error::domain(format!("unknown component kind '{other}'"))),
        }
    }
}

/// Structure and ranks of one mixture component.
///
/// CP takes one rank, Tucker one per mode, TT `D - 1` inner ranks and the
/// background none.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub kind: ComponentKind,
    #[serde(default)]
    pub ranks: Vec<usize>,
}

impl ComponentSpec {
    pub fn new(kind: ComponentKind, ranks: Vec<usize>) -> Self {
        ComponentSpec { kind, ranks }
    }

    pub fn cp(rank: usize) -> Self {
        Self::new(ComponentKind::Cp, vec![rank])
    }

    pub fn tucker(ranks: Vec<usize>) -> Self {
        Self::new(ComponentKind::Tucker, ranks)
    }

    pub fn tt(ranks: Vec<usize>) -> Self {
        Self::new(ComponentKind::Tt, ranks)
    }

    pub fn background() -> Self {
        Self::new(ComponentKind::Background, Vec::new())
    }

    /// Same rank for every rank index of the structure (`R_1 = ... = R_V`).
    pub fn uniform(kind: ComponentKind, rank: usize, ndim: usize) -> Self {
        let v = match kind {
            ComponentKind::Cp => 1,
            ComponentKind::Tucker => ndim,
            ComponentKind::Tt => ndim.saturating_sub(1),
            ComponentKind::Background => 0,
        };
        Self::new(kind, vec![rank; v])
    }

    pub fn validate(&self, shape: &Shape) -> Result<()> {
        let d = shape.ndim();
        let expected = match self.kind {
            ComponentKind::Cp => 1,
            ComponentKind::Tucker => d,
            ComponentKind::Tt => d - 1,
            ComponentKind::Background => 0,
        };
        if self.ranks.len() != expected {
            return Err(Error::domain(format!(
                "{} component on a {d}-mode shape needs {expected} rank(s), got {}",
                self.kind,
                self.ranks.len()
            )));
        }
        if self.ranks.contains(&0) {
            return Err(Error::domain(format!("{} rank must be positive", self.kind)));
        }
        if self.kind == ComponentKind::Tucker {
            if d > tucker::MAX_MODES {
                return Err(Error::domain(format!(
                    "Tucker components support at most {} modes, shape has {d}",
                    tucker::MAX_MODES
                )));
            }
            let core: Option<usize> = self.ranks.iter().try_fold(1usize, |a, &r| a.checked_mul(r));
            match core {
                Some(n) if n <= tucker::MAX_CORE_SIZE => {}
                _ => {
                    return Err(Error::domain(format!(
                        "Tucker core {:?} exceeds {} rank tuples",
                        self.ranks,
                        tucker::MAX_CORE_SIZE
                    )))
                }
            }
        }
        Ok(())
    }

    /// Free-parameter tally used by the rank budget.
    pub fn parameter_count(&self, shape: &Shape) -> usize {
        let dims = shape.dims();
        match self.kind {
            ComponentKind::Cp => self.ranks[0] * dims.iter().sum::<usize>(),
            ComponentKind::Tucker => {
                self.ranks.iter().product::<usize>()
                    + dims.iter().zip(&self.ranks).map(|(i, r)| i * r).sum::<usize>()
            }
            ComponentKind::Tt => {
                let d = dims.len();
                (0..d)
                    .map(|k| {
                        let left = if k == 0 { 1 } else { self.ranks[k - 1] };
                        let right = if k + 1 == d { 1 } else { self.ranks[k] };
                        left * dims[k] * right
                    })
                    .sum()
            }
            ComponentKind::Background => 0,
        }
    }
}

impl fmt::Display for ComponentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ranks.is_empty() {
            write!(f, "{}", self.kind)
        } else {
            let r: Vec<String> = self.ranks.iter().map(|r| r.to_string()).collect();
            write!(f, "{}[{}]", self.kind, r.join(","))
        }
    }
}

/// Uniform distribution `1 / |Omega_I|`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundComponent {
    log_value: f64,
}

impl BackgroundComponent {
    pub fn new(shape: &Shape) -> Self {
        BackgroundComponent {
            log_value: -shape.log_cardinality(),
        }
    }

    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }

    pub fn log_value(&self) -> f64 {
        self.log_value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Cp(CpComponent),
    Tucker(TuckerComponent),
    Tt(TtComponent),
    Background(BackgroundComponent),
}

impl Component {
    pub fn kind(&self) -> ComponentKind {
        match self {
            Component::Cp(_) => ComponentKind::Cp,
            Component::Tucker(_) => ComponentKind::Tucker,
            Component::Tt(_) => ComponentKind::Tt,
            Component::Background(_) => ComponentKind::Background,
        }
    }

    pub fn spec(&self) -> ComponentSpec {
        let ranks = match self {
            Component::Cp(c) => vec![c.rank()],
            Component::Tucker(c) => c.ranks().to_vec(),
            Component::Tt(c) => c.ranks(),
            Component::Background(_) => Vec::new(),
        };
        ComponentSpec::new(self.kind(), ranks)
    }

    pub fn eval(&self, idx: &[usize]) -> f64 {
        match self {
            Component::Cp(c) => c.eval(idx),
            Component::Tucker(c) => c.eval(idx),
            Component::Tt(c) => c.eval(idx),
            Component::Background(c) => c.value(),
        }
    }

    /// `Σ_i P_i` computed from the parameters, without enumerating `Omega_I`.
    pub fn total_mass(&self) -> f64 {
        match self {
            Component::Cp(c) => c.total_mass(),
            Component::Tucker(c) => c.total_mass(),
            Component::Tt(c) => c.total_mass(),
            Component::Background(_) => 1.0,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Component::Cp(c) => c.parameter_count(),
            Component::Tucker(c) => c.parameter_count(),
            Component::Tt(c) => c.parameter_count(),
            Component::Background(_) => 0,
        }
    }
}

/// Draws a normalized component with i.i.d. uniform(0, 1) parameters.
pub fn init_component(spec: &ComponentSpec, shape: &Shape, rng: &mut impl Rng) -> Result<Component> {
    spec.validate(shape)?;
    Ok(match spec.kind {
        ComponentKind::Cp => Component::Cp(CpComponent::random(shape, spec.ranks[0], rng)),
        ComponentKind::Tucker => Component::Tucker(TuckerComponent::random(shape, &spec.ranks, rng)),
        ComponentKind::Tt => Component::Tt(TtComponent::random(shape, &spec.ranks, rng)),
        ComponentKind::Background => Component::Background(BackgroundComponent::new(shape)),
    })
}

/// `P = Σ_k η_k P^[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    shape: Shape,
    components: Vec<Component>,
    weights: Vec<f64>,
}

impl MixtureModel {
    /// Validates that weights form a probability vector (within 1e-12).
    pub fn new(shape: Shape, components: Vec<Component>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::domain("a mixture needs at least one component"));
        }
        if components.len() != weights.len() {
            return Err(Error::domain(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::domain("mixture weights must be nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("mixture weights sum {sum}, expected 1")));
        }
        for (k, c) in components.iter().enumerate() {
            let expected_modes = shape.ndim();
            let modes = match c {
                Component::Cp(c) => c.factors().len(),
                Component::Tucker(c) => c.factors().len(),
                Component::Tt(c) => c.ndim(),
                Component::Background(_) => expected_modes,
            };
            if modes != expected_modes {
                return Err(Error::domain(format!(
                    "component {k} has {modes} modes, shape has {expected_modes}"
                )));
            }
            let rows_ok = match c {
                Component::Cp(c) => c.factors().iter().zip(shape.dims()).all(|(a, &n)| a.nrows() == n),
                Component::Tucker(c) => c.factors().iter().zip(shape.dims()).all(|(a, &n)| a.nrows() == n),
                Component::Tt(c) => c.cores().iter().zip(shape.dims()).all(|(g, &n)| g.dim().1 == n),
                Component::Background(b) => (b.log_value() + shape.log_cardinality()).abs() < 1e-12,
            };
            if !rows_ok {
                return Err(Error::domain(format!("component {k} does not match shape {shape}")));
            }
        }
        Ok(MixtureModel {
            shape,
            components,
            weights,
        })
    }

    /// Random initialization: components in declaration order, then the
    /// weights, all from one seeded stream.
    pub fn init(shape: &Shape, specs: &[ComponentSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(shape, specs, &mut rng)
    }

    pub fn init_with(shape: &Shape, specs: &[ComponentSpec], rng: &mut impl Rng) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::domain("a mixture needs at least one component"));
        }
        let components = specs
            .iter()
            .map(|s| init_component(s, shape, rng))
            .collect::<Result<Vec<_>>>()?;
        let raw: Vec<f64> = specs.iter().map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        Ok(MixtureModel {
            shape: shape.clone(),
            components,
            weights,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn specs(&self) -> Vec<ComponentSpec> {
        self.components.iter().map(Component::spec).collect()
    }

    pub fn has_background(&self) -> bool {
        self.components
            .iter()
            .zip(&self.weights)
            .any(|(c, &w)| matches!(c, Component::Background(_)) && w > 0.0)
    }

    pub fn eval(&self, idx: &[usize]) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, &w)| if w == 0.0 { 0.0 } else { w * c.eval(idx) })
            .sum()
    }

    /// Model values aligned with the support of `t`.
    pub fn eval_support(&self, t: &EmpiricalTensor) -> Vec<f64> {
        t.indices().iter().map(|i| self.eval(i)).collect()
    }

    /// Free parameters: component parameters plus `K - 1` weights.
    pub fn parameter_count(&self) -> usize {
        self.components.iter().map(Component::parameter_count).sum::<usize>() + self.len() - 1
    }

    /// Dense `P` over all of `Omega_I`.
    pub fn materialize_dense(&self) -> Result<DenseTensor> {
        let cells = self
            .shape
            .cardinality()
            .filter(|&n| n <= MAX_DENSE_CELLS)
            .ok_or_else(|| {
                Error::domain(format!(
                    "shape {} exceeds the dense materialization limit of {MAX_DENSE_CELLS} cells",
                    self.shape
                ))
            })?;
        let values = (0..cells)
            .map(|f| self.eval(&self.shape.unflatten(f)))
            .collect();
        DenseTensor::new(self.shape.clone(), values)
    }

    pub(crate) fn components_mut(&mut self) -> &mut [Component] {
        &mut self.components
    }

    pub(crate) fn set_weights(&mut self, weights: Vec<f64>) {
        self.weights = weights;
    }
}

/// Pointwise evaluation of one component.
pub fn eval_component(c: &Component, idx: &MultiIndex) -> f64 {
    c.eval(idx)
}
