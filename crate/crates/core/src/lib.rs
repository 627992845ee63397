//! Estimation of discrete joint distributions with mixtures of low-rank
//! tensors (CP, Tucker, tensor train) and a uniform background, fitted by
//! minimizing the alpha-divergence to the empirical distribution.

pub mod divergence;
pub mod e2m;
mod error;
pub mod io;
pub mod manybody;
pub mod models;
pub mod tasks;
pub mod tensor;

pub use divergence::{alpha_divergence, cross_entropy, negative_log_likelihood, objective, Alpha, NllScore};
pub use e2m::{fit, fit_observed, fit_tt_scalable, FitConfig, FitTrace, StopReason, TraceRecord};
pub use error::{Error, Result};
pub use models::{Component, ComponentKind, ComponentSpec, MixtureModel};
pub use tasks::{accuracy, classify, evaluate_density, grid_search, EvalReport, GridSpec, Metric};
pub use tensor::{build_empirical, DenseTensor, EmpiricalTensor, MultiIndex, Shape};
