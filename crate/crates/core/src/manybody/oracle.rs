//! Reference solver for the many-body cross-entropy problem.
//!
//! Minimizes `H(M, Q) = -Σ_{i,r} M_ir log Q_ir` over a product-form `Q` by
//! exact block-coordinate updates: with every other factor fixed, the
//! optimal block is `marginal / (μ · mass of the rest)`. Each block update
//! is the minimizer of a convex subproblem, so `H` never increases. This is
//! a slow, dense route kept for checking the closed forms.

use ndarray::{Array2, Array3, ArrayD, Dimension, IxDyn};

use crate::error::{Error, Result};
use crate::models::{
    BackgroundComponent, Component, ComponentKind, ComponentSpec, CpComponent, TtComponent, TuckerComponent,
};
use crate::tensor::{DenseTensor, Shape};

const MAX_CELLS: usize = 100_000;
const MAX_SWEEPS: usize = 100_000;
const STALL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub component: Component,
    pub cross_entropy: f64,
    pub sweeps: usize,
}

fn div(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// `Q_ir` of a CP, Tucker or TT component at `(i, r)`.
pub fn component_term(c: &Component, i: &[usize], r: &[usize]) -> f64 {
    match c {
        Component::Cp(cp) => cp.factors().iter().zip(i).map(|(a, &k)| a[[k, r[0]]]).product(),
        Component::Tucker(t) => {
            t.core()[IxDyn(r)] * t.factors().iter().zip(i).zip(r).map(|((a, &k), &q)| a[[k, q]]).product::<f64>()
        }
        Component::Tt(t) => {
            let d = t.ndim();
            t.cores()
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    let a = if k == 0 { 0 } else { r[k - 1] };
                    let b = if k + 1 == d { 0 } else { r[k] };
                    g[[a, i[k], b]]
                })
                .product()
        }
        Component::Background(b) => b.value(),
    }
}

/// `H(M, Q)` for a dense `M` laid out as `I_1 × ... × I_D × (rank modes)`.
pub fn many_body_cross_entropy(m: &DenseTensor, c: &Component, ndim: usize) -> f64 {
    let mut h = 0.0;
    for (flat, &v) in m.values().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let full = m.shape().unflatten(flat);
        let q = component_term(c, &full[..ndim], &full[ndim..]);
        h -= v * q.ln();
    }
    h
}

/// Minimizes `H(M, Q)` for the given structure by block-coordinate updates
/// until a sweep improves `H` by less than `1e-12`.
pub fn manybody_oracle(m: &DenseTensor, spec: &ComponentSpec, shape: &Shape) -> Result<OracleResult> {
    spec.validate(shape)?;
    if m.values().len() > MAX_CELLS {
        return Err(Error::domain(format!(
            "oracle input has {} cells, limit is {MAX_CELLS}",
            m.values().len()
        )));
    }
    let d = shape.ndim();
    let mu: f64 = m.values().iter().sum();
    let cells: Vec<(Vec<usize>, f64)> = m
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(f, &v)| (m.shape().unflatten(f).0, v))
        .collect();

    let mut state = match spec.kind {
        ComponentKind::Cp => {
            let r = spec.ranks[0];
            Component::Cp(CpComponent::from_factors(
                shape.dims().iter().map(|&n| Array2::from_elem((n, r), 1.0)).collect(),
            )?)
        }
        ComponentKind::Tucker => Component::Tucker(TuckerComponent::from_parts(
            ArrayD::from_elem(IxDyn(&spec.ranks), 1.0),
            shape
                .dims()
                .iter()
                .zip(&spec.ranks)
                .map(|(&n, &r)| Array2::from_elem((n, r), 1.0))
                .collect(),
        )?),
        ComponentKind::Tt => {
            let cores = (0..d)
                .map(|k| {
                    let left = if k == 0 { 1 } else { spec.ranks[k - 1] };
                    let right = if k + 1 == d { 1 } else { spec.ranks[k] };
                    Array3::from_elem((left, shape.dim(k), right), 1.0)
                })
                .collect();
            Component::Tt(TtComponent::from_cores(cores)?)
        }
        ComponentKind::Background => {
            let c = Component::Background(BackgroundComponent::new(shape));
            let h = many_body_cross_entropy(m, &c, d);
            return Ok(OracleResult {
                component: c,
                cross_entropy: h,
                sweeps: 0,
            });
        }
    };

    let mut h = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        state = sweep(state, &cells, mu, d)?;
        let next = many_body_cross_entropy(m, &state, d);
        let improved = h - next;
        h = next;
        if improved < STALL {
            break;
        }
    }
    Ok(OracleResult {
        component: state,
        cross_entropy: h,
        sweeps,
    })
}

fn column_sums(a: &Array2<f64>) -> Vec<f64> {
    a.columns().into_iter().map(|c| c.sum()).collect()
}

fn sweep(state: Component, cells: &[(Vec<usize>, f64)], mu: f64, d: usize) -> Result<Component> {
    Ok(match state {
        Component::Cp(cp) => {
            let rank = cp.rank();
            let mut factors = cp.factors().to_vec();
            for k in 0..d {
                let mut rest = vec![1.0; rank];
                for (j, a) in factors.iter().enumerate() {
                    if j != k {
                        for (r, s) in column_sums(a).into_iter().enumerate() {
                            rest[r] *= s;
                        }
                    }
                }
                let mut marg = Array2::zeros(factors[k].raw_dim());
                for (full, v) in cells {
                    marg[[full[k], full[d]]] += v;
                }
                for ((_, r), x) in marg.indexed_iter_mut() {
                    *x = div(*x, mu * rest[r]);
                }
                factors[k] = marg;
            }
            Component::Cp(CpComponent::from_factors(factors)?)
        }
        Component::Tucker(t) => {
            let mut core = t.core().clone();
            let mut factors = t.factors().to_vec();
            // core block
            let sums: Vec<Vec<f64>> = factors.iter().map(column_sums).collect();
            let mut marg = ArrayD::zeros(core.raw_dim());
            for (full, v) in cells {
                marg[IxDyn(&full[d..])] += v;
            }
            for (r, x) in marg.indexed_iter_mut() {
                let r = r.slice();
                let rest: f64 = sums.iter().zip(r).map(|(s, &q)| s[q]).product();
                *x = div(*x, mu * rest);
            }
            core = marg;
            // factor blocks
            for k in 0..d {
                let sums: Vec<Vec<f64>> = factors.iter().map(column_sums).collect();
                let mut rest = vec![0.0; factors[k].ncols()];
                for (r, &g) in core.indexed_iter() {
                    let r = r.slice();
                    let other: f64 = sums
                        .iter()
                        .zip(r)
                        .enumerate()
                        .filter(|(j, _)| *j != k)
                        .map(|(_, (s, &q))| s[q])
                        .product();
                    rest[r[k]] += g * other;
                }
                let mut fm = Array2::zeros(factors[k].raw_dim());
                for (full, v) in cells {
                    fm[[full[k], full[d + k]]] += v;
                }
                for ((_, r), x) in fm.indexed_iter_mut() {
                    *x = div(*x, mu * rest[r]);
                }
                factors[k] = fm;
            }
            Component::Tucker(TuckerComponent::from_parts(core, factors)?)
        }
        Component::Tt(t) => {
            let mut cores = t.cores().to_vec();
            for k in 0..d {
                let mut left = vec![1.0];
                for g in &cores[..k] {
                    left = summed_step_right(g, &left);
                }
                let mut right = vec![1.0];
                for g in cores[k + 1..].iter().rev() {
                    right = summed_step_left(g, &right);
                }
                let mut num = Array3::zeros(cores[k].raw_dim());
                for (full, v) in cells {
                    let r = &full[d..];
                    let a = if k == 0 { 0 } else { r[k - 1] };
                    let b = if k + 1 == d { 0 } else { r[k] };
                    num[[a, full[k], b]] += v;
                }
                for ((a, _, b), x) in num.indexed_iter_mut() {
                    *x = div(*x, mu * left[a] * right[b]);
                }
                cores[k] = num;
            }
            Component::Tt(TtComponent::from_scaled_cores(cores))
        }
        Component::Background(b) => Component::Background(b),
    })
}

fn summed_step_right(g: &Array3<f64>, v: &[f64]) -> Vec<f64> {
    let (ra, ni, rb) = g.dim();
    let mut out = vec![0.0; rb];
    for a in 0..ra {
        for i in 0..ni {
            for (b, o) in out.iter_mut().enumerate() {
                *o += v[a] * g[[a, i, b]];
            }
        }
    }
    out
}

fn summed_step_left(g: &Array3<f64>, v: &[f64]) -> Vec<f64> {
    let (ra, ni, rb) = g.dim();
    let mut out = vec![0.0; ra];
    for (a, o) in out.iter_mut().enumerate() {
        for i in 0..ni {
            for (b, &vb) in v.iter().enumerate().take(rb) {
                *o += g[[a, i, b]] * vb;
            }
        }
    }
    out
}
