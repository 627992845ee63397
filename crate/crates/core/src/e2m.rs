//! The outer fitting loop: combined E-step, closed-form M-step, weight
//! update, objective tracking and stopping.
//!
//! The surrogate objective `L_α` is recorded for the initial model and after
//! every M-step, so a trace of `t` iterations has `t + 1` records. Each
//! iteration is checked against the monotone-decrease guarantee; a rise
//! beyond [`MONOTONE_SLACK`] is reported as an internal error.

use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::divergence::{objective, Alpha};
use crate::error::{Error, Result};
use crate::manybody::{compute_responsibilities_with, mstep, responsibility_scalars, TtStats, TtStatsMode};
use crate::models::{Chain, Component, ComponentKind, ComponentSpec, MixtureModel, TtComponent};
use crate::tensor::{EmpiricalTensor, Shape};

/// Allowed rise of the objective between iterations before the run is
/// declared broken.
pub const MONOTONE_SLACK: f64 = 1e-9;

fn default_max_iterations() -> usize {
    1200
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_trace_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub alpha: Alpha,
    #[serde(rename = "component")]
    pub components: Vec<ComponentSpec>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
    /// Log (and persist) every n-th trace record.
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
    #[serde(default)]
    pub tt_stats: TtStatsMode,
}

impl FitConfig {
    pub fn new(alpha: Alpha, components: Vec<ComponentSpec>) -> Self {
        FitConfig {
            alpha,
            components,
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            seed: 0,
            trace_every: default_trace_every(),
            tt_stats: TtStatsMode::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn with_tt_stats(mut self, mode: TtStatsMode) -> Self {
        self.tt_stats = mode;
        self
    }

    pub fn validate(&self, shape: &Shape) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::domain("fit configuration lists no components"));
        }
        if self.max_iterations == 0 {
            return Err(Error::domain("max_iterations must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::domain(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.trace_every == 0 {
            return Err(Error::domain("trace_every must be at least 1"));
        }
        for c in &self.components {
            c.validate(shape)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: f64,
    pub weights: Vec<f64>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub records: Vec<TraceRecord>,
    pub stop_reason: Option<StopReason>,
}

impl FitTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// Completed iterations (records minus the initial one).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    /// Seconds per iteration, from consecutive elapsed stamps.
    pub fn iteration_seconds(&self) -> Vec<f64> {
        self.records
            .windows(2)
            .map(|w| w[1].elapsed_seconds - w[0].elapsed_seconds)
            .collect()
    }

    fn push(&mut self, iteration: usize, objective: f64, weights: &[f64], start: &Instant) {
        self.records.push(TraceRecord {
            iteration,
            objective,
            weights: weights.to_vec(),
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });
    }
}

/// Stop when the last objective change is below the tolerance or the
/// iteration budget is spent.
pub fn should_stop(trace: &FitTrace, config: &FitConfig) -> Option<StopReason> {
    let t = trace.iterations();
    if t >= 1 {
        let n = trace.records.len();
        let delta = trace.records[n - 1].objective - trace.records[n - 2].objective;
        if delta.abs() < config.tolerance {
            return Some(StopReason::Tolerance);
        }
    }
    if t >= config.max_iterations {
        return Some(StopReason::MaxIterations);
    }
    None
}

/// State handed to a fit observer after the initial evaluation and after
/// every iteration.
#[derive(Debug)]
pub struct IterationView<'a> {
    pub iteration: usize,
    pub model: &'a MixtureModel,
    pub objective: f64,
    /// `Σ_i w_i P_i` of the E-step that produced this model; `None` for the
    /// initial model.
    pub responsibility_mass: Option<f64>,
    /// Model values on the support, aligned with the empirical tensor.
    pub support_values: &'a [f64],
}

/// Fits a mixture to `t`.
pub fn fit(t: &EmpiricalTensor, config: &FitConfig) -> Result<(MixtureModel, FitTrace)> {
    fit_observed(t, config, |_| {})
}

/// [`fit`] with a callback invoked after every iteration.
pub fn fit_observed<F>(t: &EmpiricalTensor, config: &FitConfig, mut observer: F) -> Result<(MixtureModel, FitTrace)>
where
    F: FnMut(&IterationView<'_>),
{
    config.validate(t.shape())?;
    let model = MixtureModel::init(t.shape(), &config.components, config.seed)?;
    fit_from(t, config, model, &mut observer)
}

/// Runs the loop from a given starting model.
pub fn fit_from<F>(
    t: &EmpiricalTensor,
    config: &FitConfig,
    mut model: MixtureModel,
    observer: &mut F,
) -> Result<(MixtureModel, FitTrace)>
where
    F: FnMut(&IterationView<'_>),
{
    config.validate(t.shape())?;
    if model.shape() != t.shape() {
        return Err(Error::domain(format!(
            "model shape {} does not match data shape {}",
            model.shape(),
            t.shape()
        )));
    }
    let alpha = config.alpha;
    let start = Instant::now();
    let mut trace = FitTrace::default();

    let mut values = model.eval_support(t);
    let mut current = objective(t, &values, alpha)?;
    check_finite(current, 0, &model)?;
    trace.push(0, current, model.weights(), &start);
    observer(&IterationView {
        iteration: 0,
        model: &model,
        objective: current,
        responsibility_mass: None,
        support_values: &values,
    });

    loop {
        if let Some(reason) = should_stop(&trace, config) {
            trace.stop_reason = Some(reason);
            break;
        }
        let iteration = trace.iterations() + 1;
        let (scalars, stats) = compute_responsibilities_with(t, &model, alpha, values, config.tt_stats)?;
        let resp_mass = scalars.responsibility_mass();
        model = mstep(&model, &stats)?;
        values = model.eval_support(t);
        let next = objective(t, &values, alpha)?;
        check_finite(next, iteration, &model)?;
        check_monotone(current, next, iteration)?;
        current = next;
        trace.push(iteration, current, model.weights(), &start);
        if iteration % config.trace_every == 0 {
            debug!("iteration {iteration}: objective {current:.12e} weights {:?}", model.weights());
        }
        observer(&IterationView {
            iteration,
            model: &model,
            objective: current,
            responsibility_mass: Some(resp_mass),
            support_values: &values,
        });
    }
    Ok((model, trace))
}

fn check_finite(value: f64, iteration: usize, model: &MixtureModel) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::internal(format!(
            "objective is {value} at iteration {iteration}; weights {:?}, components {:?}",
            model.weights(),
            model.specs()
        )))
    }
}

fn check_monotone(previous: f64, next: f64, iteration: usize) -> Result<()> {
    if next > previous + MONOTONE_SLACK {
        Err(Error::internal(format!(
            "objective increased at iteration {iteration}: {previous:.15e} -> {next:.15e}"
        )))
    } else {
        Ok(())
    }
}

/// Tensor-train fit with per-sample prefix/suffix chains, `O(D N R^2)` per
/// iteration.
///
/// Accepts a single TT component, optionally mixed with a background. With a
/// background the generic driver handles the weights and the TT component is
/// returned on its own.
pub fn fit_tt_scalable(t: &EmpiricalTensor, config: &FitConfig) -> Result<(TtComponent, FitTrace)> {
    config.validate(t.shape())?;
    let kinds: Vec<ComponentKind> = config.components.iter().map(|c| c.kind).collect();
    let tt_count = kinds.iter().filter(|k| **k == ComponentKind::Tt).count();
    let bg_count = kinds.iter().filter(|k| **k == ComponentKind::Background).count();
    if tt_count != 1 || tt_count + bg_count != kinds.len() || bg_count > 1 {
        return Err(Error::domain(
            "the scalable tensor-train driver takes one TT component and at most one background",
        ));
    }
    if bg_count == 1 {
        let cfg = config.clone().with_tt_stats(TtStatsMode::Cumulant);
        let (model, trace) = fit(t, &cfg)?;
        let tt = model
            .components()
            .iter()
            .find_map(|c| match c {
                Component::Tt(tt) => Some(tt.clone()),
                _ => None,
            })
            .expect("validated above");
        return Ok((tt, trace));
    }

    let model = MixtureModel::init(t.shape(), &config.components, config.seed)?;
    let mut tt = match &model.components()[0] {
        Component::Tt(tt) => tt.clone(),
        _ => unreachable!("single TT component"),
    };
    let alpha = config.alpha;
    let start = Instant::now();
    let mut trace = FitTrace::default();
    let mut chains: Vec<Chain> = vec![Chain::default(); t.nnz()];
    let mut current = f64::INFINITY;

    loop {
        for (idx, chain) in t.indices().iter().zip(chains.iter_mut()) {
            tt.chain_into(idx, chain);
        }
        let values: Vec<f64> = chains.iter().map(Chain::value).collect();
        let next = objective(t, &values, alpha)?;
        let iteration = trace.records.len();
        if !next.is_finite() {
            return Err(Error::internal(format!(
                "objective is {next} at iteration {iteration} of the scalable TT fit"
            )));
        }
        if iteration > 0 {
            check_monotone(current, next, iteration)?;
        }
        current = next;
        trace.push(iteration, current, &[1.0], &start);
        if let Some(reason) = should_stop(&trace, config) {
            trace.stop_reason = Some(reason);
            break;
        }

        let scalars = responsibility_scalars(t, alpha, values)?;
        let mut numerators: Vec<_> = tt.cores().iter().map(|g| ndarray::Array3::zeros(g.raw_dim())).collect();
        let mut denominators: Vec<Vec<f64>> = tt.cores().iter().map(|g| vec![0.0; g.dim().2]).collect();
        for ((idx, chain), &w) in t.indices().iter().zip(&chains).zip(&scalars.w) {
            for (d, g) in tt.cores().iter().enumerate() {
                let i = idx[d];
                let left = &chain.prefix[d];
                let right = &chain.suffix[d + 1];
                let num: &mut ndarray::Array3<f64> = &mut numerators[d];
                for (a, &la) in left.iter().enumerate() {
                    for (b, &rb) in right.iter().enumerate() {
                        num[[a, i, b]] += w * la * g[[a, i, b]] * rb;
                    }
                }
                for (b, den) in denominators[d].iter_mut().enumerate() {
                    *den += w * chain.prefix[d + 1][b] * right[b];
                }
            }
        }
        tt = crate::manybody::mstep_tt_with_denominators(
            &TtStats {
                numerators,
                total: scalars.responsibility_mass(),
            },
            &denominators,
        )?;
    }
    Ok((tt, trace))
}
