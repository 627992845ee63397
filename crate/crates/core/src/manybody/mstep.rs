use log::warn;
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::models::{Component, CpComponent, MixtureModel, TtComponent, TuckerComponent, WEIGHT_FLOOR};

use super::stats::{ComponentStats, CpStats, SufficientStats, TtStats, TuckerStats};

/// Rank slices whose responsibility mass falls below this are reinitialized.
pub const DEAD_RANK_MASS: f64 = 1e-15;

/// `A^(d)[i, r] = S^(d)[i, r] / (μ^(1/D) s[r]^(1 - 1/D))`.
pub fn mstep_cp(stats: &CpStats) -> Result<CpComponent> {
    let mu = stats.total;
    if !(mu > 0.0) {
        return Err(Error::internal("CP M-step with zero responsibility mass"));
    }
    let d = stats.modes.len() as f64;
    let mut dead = Vec::new();
    let factors = stats
        .modes
        .iter()
        .map(|s| {
            let mut a = s.clone();
            for (r, mut col) in a.columns_mut().into_iter().enumerate() {
                let sr = stats.rank_mass[r];
                if sr < DEAD_RANK_MASS {
                    // mass 1e-12 spread uniformly over the column
                    let fill = 1e-12f64.powf(1.0 / d) / col.len() as f64;
                    col.fill(fill);
                } else {
                    let scale = mu.powf(1.0 / d) * sr.powf(1.0 - 1.0 / d);
                    col.mapv_inplace(|v| v / scale);
                }
            }
            a
        })
        .collect();
    for (r, &sr) in stats.rank_mass.iter().enumerate() {
        if sr < DEAD_RANK_MASS {
            dead.push(r);
        }
    }
    let mut cp = CpComponent::from_factors(factors)?;
    if !dead.is_empty() {
        warn!("CP rank columns {dead:?} carried no responsibility mass; reinitialized");
        cp.rescale_to_unit_mass();
    }
    Ok(cp)
}

/// `G_r = Σ_i M_ir / μ`, `A^(d)[i, r_d] = Σ_{i\d, r\d} M / Σ_{i, r\d} M`.
pub fn mstep_tucker(stats: &TuckerStats) -> Result<TuckerComponent> {
    let mu = stats.total;
    if !(mu > 0.0) {
        return Err(Error::internal("Tucker M-step with zero responsibility mass"));
    }
    let mut core = stats.core.mapv(|v| v / mu);
    let mut factors = Vec::with_capacity(stats.modes.len());
    let mut revived = false;
    for (d, s) in stats.modes.iter().enumerate() {
        let denom = stats.denominators(d);
        let mut a = s.clone();
        for (r, mut col) in a.columns_mut().into_iter().enumerate() {
            if denom[r] < DEAD_RANK_MASS {
                warn!("Tucker mode {d} rank {r} carried no responsibility mass; reinitialized");
                let n = col.len() as f64;
                col.fill(1.0 / n);
                let mut slice = core.index_axis_mut(ndarray::Axis(d), r);
                let fill = 1e-12 / slice.len() as f64;
                slice.mapv_inplace(|g| g.max(fill));
                revived = true;
            } else {
                col.mapv_inplace(|v| v / denom[r]);
            }
        }
        factors.push(a);
    }
    if revived {
        let total = core.sum();
        core.mapv_inplace(|g| g / total);
    }
    TuckerComponent::from_parts(core, factors)
}

/// `G^(d)[r_{d-1}, i_d, r_d] = numerator / Σ_{r_{d-1}, i_d} numerator`.
pub fn mstep_tt(stats: &TtStats) -> Result<TtComponent> {
    let denominators: Vec<Vec<f64>> = (0..stats.numerators.len()).map(|d| stats.denominators(d)).collect();
    mstep_tt_with_denominators(stats, &denominators)
}

/// TT M-step with denominators supplied by the caller, e.g. accumulated
/// from per-sample chains instead of summed from the numerators.
pub fn mstep_tt_with_denominators(stats: &TtStats, denominators: &[Vec<f64>]) -> Result<TtComponent> {
    if !(stats.total > 0.0) {
        return Err(Error::internal("TT M-step with zero responsibility mass"));
    }
    if denominators.len() != stats.numerators.len() {
        return Err(Error::internal("TT denominators do not match the cores"));
    }
    let cores: Vec<Array3<f64>> = stats
        .numerators
        .iter()
        .zip(denominators)
        .enumerate()
        .map(|(d, (num, denom))| {
            let (ra, ni, _) = num.dim();
            let mut g = num.clone();
            for (b, &den) in denom.iter().enumerate() {
                if den < DEAD_RANK_MASS {
                    warn!("TT core {d} rank {b} carried no responsibility mass; reinitialized");
                    let fill = 1.0 / (ra * ni) as f64;
                    g.slice_mut(ndarray::s![.., .., b]).fill(fill);
                } else {
                    g.slice_mut(ndarray::s![.., .., b]).mapv_inplace(|v| v / den);
                }
            }
            g
        })
        .collect();
    Ok(TtComponent::from_scaled_cores(cores))
}

/// `η_k = m_k / Σ m`, with weights below the floor set to zero and the rest
/// renormalized.
pub fn update_weights(masses: &[f64]) -> Result<Vec<f64>> {
    update_weights_keeping(masses, &vec![false; masses.len()])
}

/// [`update_weights`], except that entries flagged in `keep` are never
/// floored. A background weight must stay positive: it is what keeps the
/// mixture strictly positive on the support.
pub fn update_weights_keeping(masses: &[f64], keep: &[bool]) -> Result<Vec<f64>> {
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::internal(format!(
            "cannot update mixture weights from masses {masses:?}"
        )));
    }
    let mut eta: Vec<f64> = masses.iter().map(|m| m / total).collect();
    for (e, &k) in eta.iter_mut().zip(keep) {
        if !k && *e < WEIGHT_FLOOR {
            *e = 0.0;
        }
    }
    let kept: f64 = eta.iter().sum();
    for e in eta.iter_mut() {
        *e /= kept;
    }
    Ok(eta)
}

/// Full M-step: every component with positive mass gets its closed-form
/// update, then the weights are refreshed.
pub fn mstep(model: &MixtureModel, stats: &SufficientStats) -> Result<MixtureModel> {
    let mut next = model.clone();
    for (comp, s) in next.components_mut().iter_mut().zip(&stats.components) {
        if s.total() <= 0.0 {
            continue;
        }
        match s {
            ComponentStats::Cp(s) => *comp = Component::Cp(mstep_cp(s)?),
            ComponentStats::Tucker(s) => *comp = Component::Tucker(mstep_tucker(s)?),
            ComponentStats::Tt(s) => *comp = Component::Tt(mstep_tt(s)?),
            ComponentStats::Background { .. } => {}
        }
    }
    let keep: Vec<bool> = next
        .components()
        .iter()
        .map(|c| matches!(c, Component::Background(_)))
        .collect();
    next.set_weights(update_weights_keeping(&stats.masses(), &keep)?);
    Ok(next)
}
