//! Versioned JSON model files.
//!
//! Floats are written with the shortest representation that round-trips
//! exactly, so a saved model evaluates bit-identically after loading.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BackgroundComponent, Component, CpComponent, MixtureModel, TtComponent, TuckerComponent};
use crate::tensor::Shape;

use super::csv_data::CategoricalSchema;

pub const MODEL_FORMAT: &str = "e2m-model v1";

/// Allowed deviation of a stored component's total mass from one.
const MASS_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    shape: Vec<usize>,
    weights: Vec<f64>,
    components: Vec<ComponentRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<CategoricalSchema>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ComponentRecord {
    Cp {
        rank: usize,
        /// One `I_d × R` matrix per mode, row-major.
        factors: Vec<Vec<Vec<f64>>>,
    },
    Tucker {
        ranks: Vec<usize>,
        /// Core entries in row-major order over `ranks`.
        core: Vec<f64>,
        factors: Vec<Vec<Vec<f64>>>,
    },
    Tt {
        ranks: Vec<usize>,
        /// Cores indexed `[r_{d-1}][i_d][r_d]`.
        cores: Vec<Vec<Vec<Vec<f64>>>>,
    },
    Background,
}

fn matrix_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::domain(format!("{what} has ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| Error::domain(format!("{what}: {e}")))
}

fn record_of(c: &Component) -> ComponentRecord {
    match c {
        Component::Cp(cp) => ComponentRecord::Cp {
            rank: cp.rank(),
            factors: cp.factors().iter().map(matrix_rows).collect(),
        },
        Component::Tucker(t) => ComponentRecord::Tucker {
            ranks: t.ranks().to_vec(),
            core: t.core().iter().copied().collect(),
            factors: t.factors().iter().map(matrix_rows).collect(),
        },
        Component::Tt(t) => ComponentRecord::Tt {
            ranks: t.ranks(),
            cores: t
                .cores()
                .iter()
                .map(|g| {
                    g.outer_iter()
                        .map(|slab| slab.rows().into_iter().map(|r| r.to_vec()).collect())
                        .collect()
                })
                .collect(),
        },
        Component::Background(_) => ComponentRecord::Background,
    }
}

fn component_of(k: usize, rec: &ComponentRecord, shape: &Shape) -> Result<Component> {
    let c = match rec {
        ComponentRecord::Cp { rank, factors } => {
            let factors = factors
                .iter()
                .enumerate()
                .map(|(d, f)| matrix_from_rows(f, &format!("component {k} factor {d}")))
                .collect::<Result<Vec<_>>>()?;
            let cp = CpComponent::from_factors(factors)?;
            if cp.rank() != *rank {
                return Err(Error::domain(format!(
                    "component {k}: declared rank {rank}, factors have {}",
                    cp.rank()
                )));
            }
            Component::Cp(cp)
        }
        ComponentRecord::Tucker { ranks, core, factors } => {
            let core = ArrayD::from_shape_vec(IxDyn(ranks), core.clone())
                .map_err(|e| Error::domain(format!("component {k} core: {e}")))?;
            let factors = factors
                .iter()
                .enumerate()
                .map(|(d, f)| matrix_from_rows(f, &format!("component {k} factor {d}")))
                .collect::<Result<Vec<_>>>()?;
            Component::Tucker(TuckerComponent::from_parts(core, factors)?)
        }
        ComponentRecord::Tt { ranks, cores } => {
            let cores = cores
                .iter()
                .enumerate()
                .map(|(d, g)| {
                    let a = g.len();
                    let i = g.first().map(Vec::len).unwrap_or(0);
                    let b = g.first().and_then(|s| s.first()).map(Vec::len).unwrap_or(0);
                    let flat: Vec<f64> = g.iter().flatten().flatten().copied().collect();
                    Array3::from_shape_vec((a, i, b), flat)
                        .map_err(|e| Error::domain(format!("component {k} core {d}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let tt = TtComponent::from_cores_unscaled(cores)?;
            if tt.ranks() != *ranks {
                return Err(Error::domain(format!(
                    "component {k}: declared ranks {ranks:?}, cores have {:?}",
                    tt.ranks()
                )));
            }
            Component::Tt(tt)
        }
        ComponentRecord::Background => Component::Background(BackgroundComponent::new(shape)),
    };
    Ok(c)
}

fn validate_document(doc: &ModelDocument) -> Result<(MixtureModel, Option<CategoricalSchema>)> {
    if doc.format != MODEL_FORMAT {
        return Err(Error::domain(format!(
            "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
            doc.format
        )));
    }
    let shape = Shape::new(doc.shape.clone())?;
    let sum: f64 = doc.weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!("weights sum {sum}, expected 1")));
    }
    let components = doc
        .components
        .iter()
        .enumerate()
        .map(|(k, r)| component_of(k, r, &shape))
        .collect::<Result<Vec<_>>>()?;
    let model = MixtureModel::new(shape, components, doc.weights.clone())?;
    for (k, c) in model.components().iter().enumerate() {
        let mass = c.total_mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::domain(format!("component {k} has total mass {mass}, expected 1")));
        }
    }
    if let Some(schema) = &doc.schema {
        schema.validate()?;
        if schema.shape() != *model.shape() {
            return Err(Error::domain(format!(
                "schema shape {} does not match model shape {}",
                schema.shape(),
                model.shape()
            )));
        }
    }
    Ok((model, doc.schema.clone()))
}

/// Serializes a model (and optionally the schema used to encode its data).
pub fn model_to_string(model: &MixtureModel, schema: Option<&CategoricalSchema>) -> String {
    let doc = ModelDocument {
        format: MODEL_FORMAT.to_string(),
        shape: model.shape().dims().to_vec(),
        weights: model.weights().to_vec(),
        components: model.components().iter().map(record_of).collect(),
        schema: schema.cloned(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("model documents always serialize");
    s.push('\n');
    s
}

pub fn model_from_str(text: &str) -> Result<(MixtureModel, Option<CategoricalSchema>)> {
    let doc: ModelDocument =
        serde_json::from_str(text).map_err(|e| Error::domain(format!("not a valid model file: {e}")))?;
    validate_document(&doc)
}

pub fn save_model(path: impl AsRef<Path>, model: &MixtureModel, schema: Option<&CategoricalSchema>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_string(model, schema)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(MixtureModel, Option<CategoricalSchema>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text).map_err(|e| match e {
        Error::Domain(m) => Error::format(path, m),
        other => other,
    })
}
