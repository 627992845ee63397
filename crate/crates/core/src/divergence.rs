//! Alpha-divergence, the log-domain surrogate objective, cross-entropy and
//! negative log-likelihood.
//!
//! Model values are passed as slices aligned with the support order of the
//! empirical tensor (see [`EmpiricalTensor::indices`]). All values are
//! support-restricted: cells with zero empirical mass contribute nothing for
//! `alpha` in (0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{EmpiricalTensor, MultiIndex};

/// Divergence parameter in (0, 1]. `1` is the KL divergence.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub const KL: Alpha = Alpha(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value <= 1.0 {
            Ok(Alpha(value))
        } else {
            Err(Error::domain(format!("alpha must lie in (0, 1], got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_kl(self) -> bool {
        self.0 == 1.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Alpha::new(v)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// `log Σ exp(x)` with the max factored out. Empty or all `-inf` input gives
/// `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

fn check_model(t: &EmpiricalTensor, model: &[f64]) -> Result<()> {
    if model.len() != t.nnz() {
        return Err(Error::domain(format!(
            "model values cover {} cells, support has {}",
            model.len(),
            t.nnz()
        )));
    }
    if let Some(k) = model.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::domain(format!(
            "model assigns zero mass to observed sample {:?}",
            t.indices()[k].0
        )));
    }
    Ok(())
}

/// `log Σ_i T_i^α P_i^(1-α)` over the support.
pub(crate) fn log_alpha_mass(t: &EmpiricalTensor, model: &[f64], alpha: Alpha) -> f64 {
    let a = alpha.value();
    let terms: Vec<f64> = t
        .weights()
        .iter()
        .zip(model)
        .map(|(&w, &p)| a * w.ln() + (1.0 - a) * p.ln())
        .collect();
    log_sum_exp(&terms)
}

/// Alpha-divergence `D_α(T, P)`; the `alpha = 1` branch is `KL(T || P)`.
pub fn alpha_divergence(t: &EmpiricalTensor, model: &[f64], alpha: Alpha) -> Result<f64> {
    check_model(t, model)?;
    if alpha.is_kl() {
        return Ok(t
            .weights()
            .iter()
            .zip(model)
            .map(|(&w, &p)| w * (w.ln() - p.ln()))
            .sum());
    }
    let a = alpha.value();
    let lm = log_alpha_mass(t, model, alpha);
    Ok(-lm.exp_m1() / (a * (1.0 - a)))
}

/// Surrogate objective `L_α(P) = log(Σ T^α P^(1-α)) / (α - 1)`; at `alpha = 1`
/// the cross-entropy `-Σ T log P`.
pub fn objective(t: &EmpiricalTensor, model: &[f64], alpha: Alpha) -> Result<f64> {
    check_model(t, model)?;
    Ok(objective_unchecked(t, model, alpha))
}

pub(crate) fn objective_unchecked(t: &EmpiricalTensor, model: &[f64], alpha: Alpha) -> f64 {
    if alpha.is_kl() {
        let logs: Vec<f64> = model.iter().map(|p| p.ln()).collect();
        return cross_entropy(t.weights(), &logs);
    }
    log_alpha_mass(t, model, alpha) / (alpha.value() - 1.0)
}

/// `-Σ w log v` with the logs supplied by the caller.
pub fn cross_entropy(weights: &[f64], log_values: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), log_values.len());
    -weights
        .iter()
        .zip(log_values)
        .map(|(&w, &lv)| if w == 0.0 { 0.0 } else { w * lv })
        .sum::<f64>()
}

/// Total and per-sample negative log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllScore {
    pub total: f64,
    pub mean: f64,
    pub count: usize,
}

/// `-Σ_n log P(x_n)` over `samples`, evaluated with `model_at`.
pub fn negative_log_likelihood<F>(model_at: F, samples: &[MultiIndex]) -> Result<NllScore>
where
    F: Fn(&MultiIndex) -> f64,
{
    if samples.is_empty() {
        return Err(Error::domain("negative log-likelihood of an empty sample set"));
    }
    let mut total = 0.0;
    for (n, x) in samples.iter().enumerate() {
        let p = model_at(x);
        if !(p > 0.0) {
            return Err(Error::domain(format!(
                "model assigns zero mass to sample {n} {:?}",
                x.0
            )));
        }
        total -= p.ln();
    }
    Ok(NllScore {
        total,
        mean: total / samples.len() as f64,
        count: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{build_empirical, Shape};
    use proptest::prelude::*;

    fn two_cell() -> EmpiricalTensor {
        let shape = Shape::new(vec![2]).unwrap();
        build_empirical(&[MultiIndex(vec![0]), MultiIndex(vec![1])], &shape).unwrap()
    }

    // Direct, non-log-domain evaluation used as the oracle below.
    fn direct_alpha_sum(t: &[f64], p: &[f64], a: f64) -> f64 {
        t.iter().zip(p).map(|(t, p)| t.powf(a) * p.powf(1.0 - a)).sum()
    }

    #[test]
    fn identical_distributions_vanish() {
        let t = two_cell();
        let a = Alpha::new(0.5).unwrap();
        assert!(alpha_divergence(&t, &[0.5, 0.5], a).unwrap().abs() < 1e-10);
        assert!(objective(&t, &[0.5, 0.5], a).unwrap().abs() < 1e-10);
    }

    #[test]
    fn two_cell_fixtures() {
        let t = two_cell();
        let p = [0.25, 0.75];
        let half = Alpha::new(0.5).unwrap();
        let s = direct_alpha_sum(&[0.5, 0.5], &p, 0.5);
        let d_oracle = (1.0 - s) / 0.25;
        let l_oracle = s.ln() / -0.5;
        // frozen: 4(1 - (sqrt(.125) + sqrt(.375))) and -2 log(...)
        assert!((d_oracle - 0.136_296_694_843_727_2).abs() < 1e-15);
        assert!((l_oracle - 0.069_336_464_195_074_08).abs() < 1e-15);

        let d = alpha_divergence(&t, &p, half).unwrap();
        assert!((d - d_oracle).abs() < 1e-14);
        assert!((d - 0.13629).abs() < 1e-5);
        let l = objective(&t, &p, half).unwrap();
        assert!((l - l_oracle).abs() < 1e-14);

        let kl = alpha_divergence(&t, &p, Alpha::KL).unwrap();
        assert!((kl - (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln())).abs() < 1e-15);
        assert!((kl - 0.14384).abs() < 1e-5);

        let ce = objective(&t, &p, Alpha::KL).unwrap();
        assert!((ce - (-0.5 * 0.25f64.ln() - 0.5 * 0.75f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0], &[0.0]), 0.0);
        let logs = [0.25f64.ln(), 0.75f64.ln()];
        let h = cross_entropy(&[0.5, 0.5], &logs);
        assert!((h - 0.836_988_216_785_835_8).abs() < 1e-15);
        let scaled = cross_entropy(&[0.15, 0.15], &logs);
        assert!((scaled - 0.3 * h).abs() < 1e-15);
    }

    #[test]
    fn zero_mass_is_rejected() {
        let t = two_cell();
        let err = alpha_divergence(&t, &[1.0, 0.0], Alpha::new(0.5).unwrap()).unwrap_err();
        assert!(err.to_string().contains("zero mass"));
        assert!(objective(&t, &[0.0, 1.0], Alpha::KL).is_err());
    }

    #[test]
    fn alpha_range() {
        assert!(Alpha::new(0.0).is_err());
        assert!(Alpha::new(1.0 + 1e-12).is_err());
        assert!(Alpha::new(f64::NAN).is_err());
        assert!(Alpha::new(1.0).unwrap().is_kl());
    }

    #[test]
    fn nll_examples() {
        let uniform = |_: &MultiIndex| 0.25;
        let s = [MultiIndex(vec![0, 1]), MultiIndex(vec![1, 1])];
        let nll = negative_log_likelihood(uniform, &s).unwrap();
        assert!((nll.mean - 4f64.ln()).abs() < 1e-15);

        // empirical model on its own samples gives the empirical entropy
        let shape = Shape::new(vec![3]).unwrap();
        let samples: Vec<MultiIndex> = [0, 0, 1, 2, 2, 2].iter().map(|&i| MultiIndex(vec![i])).collect();
        let t = build_empirical(&samples, &shape).unwrap();
        let nll = negative_log_likelihood(|x| t.get(x), &samples).unwrap();
        let entropy: f64 = -t.weights().iter().map(|w| w * w.ln()).sum::<f64>();
        assert!((nll.mean - entropy).abs() < 1e-14);

        let err = negative_log_likelihood(|_| 0.0, &s).unwrap_err();
        assert!(err.to_string().contains("[0, 1]"));
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (2usize..8).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.01f64..1.0, n),
                proptest::collection::vec(0.01f64..1.0, n),
                proptest::collection::vec(0.01f64..1.0, n),
            )
        })
    }

    fn full_support(raw: &[f64]) -> EmpiricalTensor {
        let n = raw.len();
        let shape = Shape::new(vec![n]).unwrap();
        let dense = crate::tensor::DenseTensor::new(shape, raw.to_vec()).unwrap();
        EmpiricalTensor::from_dense(&dense).unwrap()
    }

    fn normalized(v: &[f64]) -> Vec<f64> {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn divergence_nonnegative_and_linked((t, p1, p2) in arb_pair(), a in 0.05f64..0.95) {
            let t = full_support(&t);
            let p1 = normalized(&p1);
            let p2 = normalized(&p2);
            let alpha = Alpha::new(a).unwrap();
            let d1 = alpha_divergence(&t, &p1, alpha).unwrap();
            let d2 = alpha_divergence(&t, &p2, alpha).unwrap();
            prop_assert!(d1 >= -1e-12);
            let oracle = (1.0 - direct_alpha_sum(t.weights(), &p1, a)) / (a * (1.0 - a));
            prop_assert!((d1 - oracle).abs() < 1e-10);
            let l1 = objective(&t, &p1, alpha).unwrap();
            let l2 = objective(&t, &p2, alpha).unwrap();
            if (d1 - d2).abs() > 1e-12 {
                prop_assert_eq!(d1 > d2, l1 > l2);
            }
            prop_assert!(alpha_divergence(&t, t.weights(), alpha).unwrap().abs() < 1e-10);
        }

        #[test]
        fn kl_limit((t, p, _) in arb_pair()) {
            let t = full_support(&t);
            let p = normalized(&p);
            // the surrogate tends to KL(T||P); the α = 1 branch reports the
            // cross-entropy, which is larger by the entropy of T
            let near = objective(&t, &p, Alpha::new(1.0 - 1e-7).unwrap()).unwrap();
            let at = objective(&t, &p, Alpha::KL).unwrap();
            let entropy: f64 = -t.weights().iter().map(|w| w * w.ln()).sum::<f64>();
            prop_assert!((near - (at - entropy)).abs() < 1e-6);
            let kl = alpha_divergence(&t, &p, Alpha::KL).unwrap();
            let near_d = alpha_divergence(&t, &p, Alpha::new(1.0 - 1e-7).unwrap()).unwrap();
            prop_assert!((near_d - kl).abs() < 1e-6);
        }

        #[test]
        fn objective_ignores_enumeration_order((t, p, _) in arb_pair(), a in 0.05f64..1.0) {
            let t = full_support(&t);
            let p = normalized(&p);
            let alpha = Alpha::new(a).unwrap();
            let forward = objective(&t, &p, alpha).unwrap();
            let rev_w: Vec<f64> = t.weights().iter().rev().copied().collect();
            let rev_p: Vec<f64> = p.iter().rev().copied().collect();
            let rt = full_support(&rev_w);
            let backward = objective(&rt, &rev_p, alpha).unwrap();
            prop_assert!((forward - backward).abs() < 1e-12 * (1.0 + forward.abs()) / (1.0 - a).max(1e-3));
        }
    }
}
