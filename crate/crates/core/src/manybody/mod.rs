//! Combined E1/E2 step and the closed-form many-body M-step.
//!
//! With `w_i = T_i^α P_i^(-α) / Σ_j T_j^α P_j^(1-α)` the responsibility
//! tensor of component `k` is `M^[k]_ir = w_i η_k Q^[k]_ir`. Only the
//! marginals each closed form needs are accumulated, one support index at a
//! time, in support order.

mod mstep;
mod oracle;
mod stats;

use serde::{Deserialize, Serialize};

use crate::divergence::{log_sum_exp, Alpha};
use crate::error::{Error, Result};
use crate::models::{Chain, Component, MixtureModel};
use crate::tensor::EmpiricalTensor;

pub use mstep::{mstep, mstep_cp, mstep_tt, mstep_tt_with_denominators, mstep_tucker, update_weights, update_weights_keeping, DEAD_RANK_MASS};
pub use oracle::{component_term, manybody_oracle, many_body_cross_entropy, OracleResult};
pub use stats::{ComponentStats, CpStats, SufficientStats, TtStats, TuckerStats};

/// How tensor-train statistics are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TtStatsMode {
    /// Prefix/suffix chains, `O(D R^2)` per support index.
    #[default]
    Cumulant,
    /// Explicit sum over every rank tuple, `O(D Π R_d)` per support index.
    BruteForce,
}

/// Per-support scalars of the combined E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityScalars {
    /// `log Σ_i T_i^α P_i^(1-α)`.
    pub log_z: f64,
    /// `w_i`, aligned with the support.
    pub w: Vec<f64>,
    /// `P_i`, aligned with the support.
    pub model_values: Vec<f64>,
}

impl ResponsibilityScalars {
    /// `Σ_i w_i P_i`; one up to rounding.
    pub fn responsibility_mass(&self) -> f64 {
        self.w.iter().zip(&self.model_values).map(|(w, p)| w * p).sum()
    }
}

/// Combined E1 and E2 step: per-support scalars and per-component
/// sufficient statistics.
pub fn compute_responsibilities(
    t: &EmpiricalTensor,
    m: &MixtureModel,
    alpha: Alpha,
) -> Result<(ResponsibilityScalars, SufficientStats)> {
    let values = m.eval_support(t);
    compute_responsibilities_with(t, m, alpha, values, TtStatsMode::Cumulant)
}

/// As [`compute_responsibilities`], reusing model values already evaluated
/// on the support.
pub fn compute_responsibilities_with(
    t: &EmpiricalTensor,
    m: &MixtureModel,
    alpha: Alpha,
    model_values: Vec<f64>,
    tt_mode: TtStatsMode,
) -> Result<(ResponsibilityScalars, SufficientStats)> {
    let scalars = responsibility_scalars(t, alpha, model_values)?;
    let mut stats: Vec<ComponentStats> = m.components().iter().map(ComponentStats::zeros_for).collect();

    let mut terms = Vec::new();
    let mut chain = Chain::default();
    for (idx, &w) in t.indices().iter().zip(&scalars.w) {
        for ((comp, &eta), acc) in m.components().iter().zip(m.weights()).zip(stats.iter_mut()) {
            if eta == 0.0 {
                continue;
            }
            let c = w * eta;
            match (comp, acc) {
                (Component::Cp(cp), ComponentStats::Cp(s)) => {
                    terms.resize(cp.rank(), 0.0);
                    cp.rank_terms(idx, &mut terms);
                    for (r, &q) in terms.iter().enumerate() {
                        let v = c * q;
                        s.rank_mass[r] += v;
                        s.total += v;
                        for (mode, &i) in s.modes.iter_mut().zip(idx.iter()) {
                            mode[[i, r]] += v;
                        }
                    }
                }
                (Component::Tucker(tk), ComponentStats::Tucker(s)) => {
                    tk.for_each_term(idx, |r, q| {
                        let v = c * q;
                        s.core[r] += v;
                        s.total += v;
                        for (d, (mode, &i)) in s.modes.iter_mut().zip(idx.iter()).enumerate() {
                            mode[[i, r[d]]] += v;
                        }
                    });
                }
                (Component::Tt(tt), ComponentStats::Tt(s)) => match tt_mode {
                    TtStatsMode::Cumulant => {
                        tt.chain_into(idx, &mut chain);
                        s.total += c * chain.value();
                        for (d, (g, num)) in tt.cores().iter().zip(s.numerators.iter_mut()).enumerate() {
                            let i = idx[d];
                            let left = &chain.prefix[d];
                            let right = &chain.suffix[d + 1];
                            for (a, &la) in left.iter().enumerate() {
                                if la == 0.0 {
                                    continue;
                                }
                                for (b, &rb) in right.iter().enumerate() {
                                    num[[a, i, b]] += c * la * g[[a, i, b]] * rb;
                                }
                            }
                        }
                    }
                    TtStatsMode::BruteForce => accumulate_tt_brute(tt.cores(), idx, c, s),
                },
                (Component::Background(b), ComponentStats::Background { total }) => {
                    *total += c * b.value();
                }
                _ => unreachable!("statistics are allocated from the same components"),
            }
        }
    }
    let stats = SufficientStats { components: stats };
    stats.check_finite()?;
    Ok((scalars, stats))
}

/// `w_i = exp(α log T_i − α log P_i − log Z)`.
pub(crate) fn responsibility_scalars(
    t: &EmpiricalTensor,
    alpha: Alpha,
    model_values: Vec<f64>,
) -> Result<ResponsibilityScalars> {
    if model_values.len() != t.nnz() {
        return Err(Error::domain("model values do not match the support"));
    }
    if let Some(k) = model_values.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::domain(format!(
            "model assigns zero mass to observed sample {:?}",
            t.indices()[k].0
        )));
    }
    let a = alpha.value();
    let log_tp: Vec<(f64, f64)> = t
        .weights()
        .iter()
        .zip(&model_values)
        .map(|(&w, &p)| (w.ln(), p.ln()))
        .collect();
    let log_z = if alpha.is_kl() {
        0.0
    } else {
        let terms: Vec<f64> = log_tp.iter().map(|&(lt, lp)| a * lt + (1.0 - a) * lp).collect();
        log_sum_exp(&terms)
    };
    let w = log_tp
        .iter()
        .map(|&(lt, lp)| (a * (lt - lp) - log_z).exp())
        .collect();
    Ok(ResponsibilityScalars {
        log_z,
        w,
        model_values,
    })
}

fn accumulate_tt_brute(cores: &[ndarray::Array3<f64>], idx: &[usize], c: f64, s: &mut TtStats) {
    let d = cores.len();
    let ranks: Vec<usize> = cores[..d - 1].iter().map(|g| g.dim().2).collect();
    let mut r = vec![0usize; d - 1];
    loop {
        let mut q = 1.0;
        for (k, g) in cores.iter().enumerate() {
            let a = if k == 0 { 0 } else { r[k - 1] };
            let b = if k + 1 == d { 0 } else { r[k] };
            q *= g[[a, idx[k], b]];
        }
        let v = c * q;
        s.total += v;
        for (k, num) in s.numerators.iter_mut().enumerate() {
            let a = if k == 0 { 0 } else { r[k - 1] };
            let b = if k + 1 == d { 0 } else { r[k] };
            num[[a, idx[k], b]] += v;
        }
        let mut k = r.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            r[k] += 1;
            if r[k] < ranks[k] {
                break;
            }
            r[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests;
