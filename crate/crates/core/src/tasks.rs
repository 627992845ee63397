//! Evaluation protocols: density estimation, classification by the
//! conditional argmax over the last mode, and validation-driven grid search
//! over alpha and ranks.

use std::io::Write;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::divergence::{negative_log_likelihood, Alpha, NllScore};
use crate::e2m::{fit, FitConfig};
use crate::error::{Error, Result};
use crate::models::{ComponentKind, ComponentSpec, MixtureModel};
use crate::tensor::{build_empirical, MultiIndex, Shape};

/// Negative log-likelihood of `samples` under `m`.
pub fn evaluate_density(m: &MixtureModel, samples: &[MultiIndex]) -> Result<NllScore> {
    for (n, s) in samples.iter().enumerate() {
        m.shape()
            .check_index(s)
            .map_err(|e| Error::domain(format!("sample {n}: {e}")))?;
    }
    negative_log_likelihood(|x| m.eval(x), samples)
}

/// `argmax_c P(features, c)` over the last mode; ties go to the smallest
/// class.
pub fn classify(m: &MixtureModel, features: &[usize]) -> Result<usize> {
    let d = m.shape().ndim();
    if features.len() + 1 != d {
        return Err(Error::domain(format!(
            "classification needs {} feature values, got {}",
            d - 1,
            features.len()
        )));
    }
    let mut idx = features.to_vec();
    idx.push(0);
    m.shape().check_index(&idx)?;
    let classes = m.shape().dim(d - 1);
    let mut best = 0;
    let mut best_p = f64::NEG_INFINITY;
    for c in 0..classes {
        idx[d - 1] = c;
        let p = m.eval(&idx);
        if p > best_p {
            best = c;
            best_p = p;
        }
    }
    Ok(best)
}

/// Fraction of labeled samples (class in the last mode) classified
/// correctly.
pub fn accuracy(m: &MixtureModel, labeled: &[MultiIndex]) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::domain("accuracy of an empty sample set"));
    }
    let mut hits = 0usize;
    for s in labeled {
        let (features, label) = s.split_at(s.len() - 1);
        if classify(m, features)? == label[0] {
            hits += 1;
        }
    }
    Ok(hits as f64 / labeled.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Nll,
    Accuracy,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nll" => Ok(Metric::Nll),
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            other => Err(Error::domain(format!("unknown metric {other:?}, expected nll or accuracy"))),
        }
    }
}

/// Rank candidates for one low-rank structure. Without explicit ranks the
/// eight-step policy of [`rank_candidates`] is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureGrid {
    pub kind: ComponentKind,
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.15, 0.5, 0.75, 0.85, 0.9, 0.95, 1.0]
}

fn default_budget() -> f64 {
    0.5
}

fn default_repeats() -> usize {
    5
}

fn default_max_iterations() -> usize {
    1200
}

fn default_tolerance() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(rename = "structure")]
    pub structures: Vec<StructureGrid>,
    /// Add a background component to every cell.
    #[serde(default)]
    pub background: bool,
    /// Parameter cap as a fraction of the training sample count.
    #[serde(default = "default_budget")]
    pub budget_fraction: f64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Worker threads; `None` uses every core.
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl GridSpec {
    pub fn new(alphas: Vec<f64>, structures: Vec<StructureGrid>) -> Self {
        GridSpec {
            alphas,
            structures,
            background: false,
            budget_fraction: default_budget(),
            repeats: default_repeats(),
            seed: 0,
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::domain("grid has no alpha candidates"));
        }
        for &a in &self.alphas {
            Alpha::new(a)?;
        }
        if self.structures.is_empty() && !self.background {
            return Err(Error::domain("grid has no structures"));
        }
        for s in &self.structures {
            if s.kind == ComponentKind::Background {
                return Err(Error::domain("list the background with `background = true`, not as a structure"));
            }
            if let Some(r) = &s.ranks {
                if r.is_empty() || r.contains(&0) {
                    return Err(Error::domain(format!("{} rank candidates must be nonempty and positive", s.kind)));
                }
            }
        }
        if !(self.budget_fraction > 0.0) {
            return Err(Error::domain("parameter budget must be positive"));
        }
        if self.repeats == 0 {
            return Err(Error::domain("repeats must be at least 1"));
        }
        Ok(())
    }
}

const MAX_CANDIDATE_RANK: usize = 4096;
const CANDIDATES: usize = 8;
const MIXTURE_CANDIDATES: usize = 5;

/// Eight equally spaced scalar ranks (`R_1 = ... = R_V`) from the largest
/// rank whose parameter count stays within `budget`. Fewer are returned
/// when the largest admissible rank is below eight.
pub fn rank_candidates(kind: ComponentKind, shape: &Shape, budget: f64) -> Vec<usize> {
    if kind == ComponentKind::Background {
        return Vec::new();
    }
    let fits = |r: usize| {
        let spec = ComponentSpec::uniform(kind, r, shape.ndim());
        spec.validate(shape).is_ok() && spec.parameter_count(shape) as f64 <= budget
    };
    let mut max = 0;
    while max < MAX_CANDIDATE_RANK && fits(max + 1) {
        max += 1;
    }
    if max == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = (1..=CANDIDATES)
        .map(|k| ((max * k) as f64 / CANDIDATES as f64).round().max(1.0) as usize)
        .collect();
    out.dedup();
    out
}

/// One grid point: an alpha and a full component list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha: f64,
    pub components: Vec<ComponentSpec>,
    pub parameter_count: usize,
}

/// Enumerates grid cells in a fixed order: alphas outermost, then rank
/// tuples in lexicographic order.
pub fn grid_cells(grid: &GridSpec, shape: &Shape, n_train: usize) -> Result<Vec<GridCell>> {
    grid.validate()?;
    let budget = grid.budget_fraction * n_train as f64;
    let mixture = grid.structures.len() > 1;
    let mut lists = Vec::new();
    for s in &grid.structures {
        let mut c = match &s.ranks {
            Some(r) => r.clone(),
            None => rank_candidates(s.kind, shape, budget),
        };
        if s.ranks.is_none() && mixture {
            c.truncate(MIXTURE_CANDIDATES);
        }
        lists.push(c);
    }

    let mut tuples: Vec<Vec<usize>> = vec![Vec::new()];
    for list in &lists {
        tuples = tuples
            .into_iter()
            .flat_map(|t| {
                list.iter().map(move |&r| {
                    let mut t = t.clone();
                    t.push(r);
                    t
                })
            })
            .collect();
    }

    let mut cells = Vec::new();
    for &alpha in &grid.alphas {
        for t in &tuples {
            let mut components: Vec<ComponentSpec> = grid
                .structures
                .iter()
                .zip(t)
                .map(|(s, &r)| ComponentSpec::uniform(s.kind, r, shape.ndim()))
                .collect();
            if grid.background {
                components.push(ComponentSpec::background());
            }
            if components.iter().any(|c| c.validate(shape).is_err()) {
                continue;
            }
            let count = components.iter().map(|c| c.parameter_count(shape)).sum::<usize>() + components.len() - 1;
            if count as f64 > budget {
                continue;
            }
            cells.push(GridCell {
                alpha,
                components,
                parameter_count: count,
            });
        }
    }
    if cells.is_empty() {
        return Err(Error::domain(format!(
            "no grid cell fits the parameter cap of {budget} ({} x {n_train} training samples)",
            grid.budget_fraction
        )));
    }
    Ok(cells)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(with = "nonfinite_as_null")]
    pub mean: f64,
    #[serde(with = "nonfinite_as_null")]
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if !mean.is_finite() {
            return Summary { mean, std: f64::NAN };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary { mean, std: var.sqrt() }
    }
}

/// Scores of one fit. NLL values are per-sample means; a split with a
/// zero-mass sample scores `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub cell: usize,
    pub seed: u64,
    #[serde(with = "nonfinite_as_null")]
    pub valid_nll: f64,
    pub valid_accuracy: f64,
    #[serde(with = "nonfinite_as_null")]
    pub test_nll: f64,
    pub test_accuracy: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: GridCell,
    pub valid_nll: Summary,
    pub valid_accuracy: Summary,
    pub test_nll: Summary,
    pub test_accuracy: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub selected: usize,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunScore>,
}

impl EvalReport {
    pub fn selected_cell(&self) -> &CellSummary {
        &self.cells[self.selected]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// One row per cell and seed, then `mean` and `std` rows per cell.
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::domain(format!("cannot write report table: {e}"));
        w.write_record([
            "cell",
            "alpha",
            "components",
            "parameters",
            "seed",
            "valid_nll",
            "valid_accuracy",
            "test_nll",
            "test_accuracy",
            "selected",
        ])
        .map_err(wrap)?;
        let describe = |c: &GridCell| c.components.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+");
        for r in &self.runs {
            let c = &self.cells[r.cell].cell;
            w.write_record([
                r.cell.to_string(),
                c.alpha.to_string(),
                describe(c),
                c.parameter_count.to_string(),
                r.seed.to_string(),
                r.valid_nll.to_string(),
                r.valid_accuracy.to_string(),
                r.test_nll.to_string(),
                r.test_accuracy.to_string(),
                (r.cell == self.selected).to_string(),
            ])
            .map_err(wrap)?;
        }
        for (k, s) in self.cells.iter().enumerate() {
            for (label, pick) in [("mean", 0), ("std", 1)] {
                let v = |x: &Summary| if pick == 0 { x.mean } else { x.std }.to_string();
                w.write_record([
                    k.to_string(),
                    s.cell.alpha.to_string(),
                    describe(&s.cell),
                    s.cell.parameter_count.to_string(),
                    label.to_string(),
                    v(&s.valid_nll),
                    v(&s.valid_accuracy),
                    v(&s.test_nll),
                    v(&s.test_accuracy),
                    (k == self.selected).to_string(),
                ])
                .map_err(wrap)?;
            }
        }
        w.flush().map_err(|e| Error::domain(format!("cannot write report table: {e}")))?;
        Ok(())
    }
}

fn mean_nll(m: &MixtureModel, samples: &[MultiIndex]) -> Result<f64> {
    match evaluate_density(m, samples) {
        Ok(s) => Ok(s.mean),
        Err(Error::Domain(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn run_cell(
    cell_index: usize,
    cell: &GridCell,
    seed: u64,
    grid: &GridSpec,
    shape: &Shape,
    splits: [&[MultiIndex]; 3],
) -> Result<RunScore> {
    let [train, valid, test] = splits;
    let t = build_empirical(train, shape)?;
    let config = FitConfig {
        alpha: Alpha::new(cell.alpha)?,
        components: cell.components.clone(),
        max_iterations: grid.max_iterations,
        tolerance: grid.tolerance,
        seed,
        trace_every: 1,
        tt_stats: Default::default(),
    };
    let (m, trace) = match fit(&t, &config) {
        Ok(r) => r,
        Err(Error::Domain(msg)) => {
            info!("cell {cell_index} seed {seed}: fit failed: {msg}");
            return Ok(RunScore {
                cell: cell_index,
                seed,
                valid_nll: f64::INFINITY,
                valid_accuracy: 0.0,
                test_nll: f64::INFINITY,
                test_accuracy: 0.0,
                iterations: 0,
            });
        }
        Err(e) => return Err(e),
    };
    Ok(RunScore {
        cell: cell_index,
        seed,
        valid_nll: mean_nll(&m, valid)?,
        valid_accuracy: accuracy(&m, valid)?,
        test_nll: mean_nll(&m, test)?,
        test_accuracy: accuracy(&m, test)?,
        iterations: trace.iterations(),
    })
}

/// Chooses the cell with the best mean validation score. Ties go to the
/// alpha closest to one, then to the earlier cell.
pub fn select_cell(cells: &[CellSummary], metric: Metric) -> usize {
    let score = |c: &CellSummary| match metric {
        Metric::Nll => c.valid_nll.mean,
        Metric::Accuracy => -c.valid_accuracy.mean,
    };
    let mut best = 0;
    for (k, c) in cells.iter().enumerate().skip(1) {
        let (s, b) = (score(c), score(&cells[best]));
        let closer = (1.0 - c.cell.alpha).abs() < (1.0 - cells[best].cell.alpha).abs();
        if s < b || (s == b && closer) {
            best = k;
        }
    }
    best
}

/// Fits every cell `repeats` times on `train`, scores on `valid` and
/// `test`, and selects by the validation metric.
pub fn grid_search(
    train: &[MultiIndex],
    valid: &[MultiIndex],
    test: &[MultiIndex],
    shape: &Shape,
    grid: &GridSpec,
    metric: Metric,
) -> Result<EvalReport> {
    for (name, s) in [("train", train), ("valid", valid), ("test", test)] {
        if s.is_empty() {
            return Err(Error::domain(format!("{name} split is empty")));
        }
    }
    let cells = grid_cells(grid, shape, train.len())?;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..grid.repeats as u64).map(move |r| (c, r)))
        .collect();
    let work = || -> Result<Vec<RunScore>> {
        jobs.par_iter()
            .map(|&(c, r)| run_cell(c, &cells[c], grid.seed + r, grid, shape, [train, valid, test]))
            .collect()
    };
    let runs = match grid.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?
            .install(work)?,
        None => work()?,
    };

    let summaries: Vec<CellSummary> = cells
        .into_iter()
        .enumerate()
        .map(|(k, cell)| {
            let rs: Vec<&RunScore> = runs.iter().filter(|r| r.cell == k).collect();
            let col = |f: fn(&RunScore) -> f64| Summary::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            CellSummary {
                cell,
                valid_nll: col(|r| r.valid_nll),
                valid_accuracy: col(|r| r.valid_accuracy),
                test_nll: col(|r| r.test_nll),
                test_accuracy: col(|r| r.test_accuracy),
            }
        })
        .collect();
    let selected = select_cell(&summaries, metric);
    Ok(EvalReport {
        metric,
        selected,
        cells: summaries,
        runs,
    })
}

/// JSON has no infinities; they are written as `null` and read back as
/// `+inf`.
mod nonfinite_as_null {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BackgroundComponent, Component, CpComponent};
    use ndarray::array;

    fn uniform(dims: &[usize]) -> MixtureModel {
        let s = Shape::new(dims.to_vec()).unwrap();
        MixtureModel::new(s.clone(), vec![Component::Background(BackgroundComponent::new(&s))], vec![1.0]).unwrap()
    }

    fn cp_model(a: ndarray::Array2<f64>, b: ndarray::Array2<f64>) -> MixtureModel {
        let s = Shape::new(vec![a.nrows(), b.nrows()]).unwrap();
        let cp = CpComponent::from_factors(vec![a, b]).unwrap();
        MixtureModel::new(s, vec![Component::Cp(cp)], vec![1.0]).unwrap()
    }

    fn idx(v: &[usize]) -> MultiIndex {
        MultiIndex(v.to_vec())
    }

    #[test]
    fn uniform_density() {
        let m = uniform(&[2, 2]);
        let s: Vec<MultiIndex> = [[0, 0], [0, 1], [1, 0], [1, 1]].iter().map(|v| idx(v)).collect();
        let score = evaluate_density(&m, &s).unwrap();
        assert!((score.total - 4.0 * 4f64.ln()).abs() < 1e-12);
        assert!((score.mean - 4f64.ln()).abs() < 1e-12);
        assert!(evaluate_density(&m, &[idx(&[2, 0])]).is_err());
    }

    #[test]
    fn zero_mass_is_domain_error() {
        let m = cp_model(array![[1.0], [0.0]], array![[1.0], [0.0]]);
        let e = evaluate_density(&m, &[idx(&[0, 0]), idx(&[1, 1])]).unwrap_err();
        assert!(!e.is_internal());
        assert!(e.to_string().contains("sample 1"));
    }

    #[test]
    fn classification_rules() {
        let m = cp_model(array![[1.0]], array![[0.25], [0.75]]);
        assert_eq!(classify(&m, &[0]).unwrap(), 1);
        let tie = cp_model(array![[1.0]], array![[0.5], [0.5]]);
        assert_eq!(classify(&tie, &[0]).unwrap(), 0);
        let bg = uniform(&[3, 4, 3]);
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(classify(&bg, &[i, j]).unwrap(), 0);
            }
        }
        assert!(classify(&bg, &[0]).is_err());
        assert!(classify(&bg, &[3, 0]).is_err());
        let acc = accuracy(&m, &[idx(&[0, 1]), idx(&[0, 0])]).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn candidate_policy() {
        let s = Shape::new(vec![4, 4, 4]).unwrap();
        // CP: 12 R <= 60 gives R <= 5, fewer than eight distinct values
        assert_eq!(rank_candidates(ComponentKind::Cp, &s, 60.0), vec![1, 2, 3, 4, 5]);
        let c = rank_candidates(ComponentKind::Cp, &s, 1200.0);
        assert_eq!(c.len(), 8);
        assert_eq!(*c.last().unwrap(), 100);
        assert!(rank_candidates(ComponentKind::Cp, &s, 5.0).is_empty());
        assert!(rank_candidates(ComponentKind::Tt, &s, 1000.0).len() == 8);
    }

    #[test]
    fn cells_respect_budget() {
        let s = Shape::new(vec![4, 4, 4]).unwrap();
        let grid = GridSpec {
            background: true,
            ..GridSpec::new(
                vec![0.5, 1.0],
                vec![
                    StructureGrid {
                        kind: ComponentKind::Cp,
                        ranks: None,
                    },
                    StructureGrid {
                        kind: ComponentKind::Tt,
                        ranks: None,
                    },
                ],
            )
        };
        let cells = grid_cells(&grid, &s, 400).unwrap();
        assert!(cells.iter().all(|c| c.parameter_count <= 200));
        assert!(cells.iter().all(|c| c.components.len() == 3));
        let per_alpha = cells.iter().filter(|c| c.alpha == 0.5).count();
        assert!(per_alpha <= 25);
        assert_eq!(cells[0].alpha, 0.5);
        let e = grid_cells(&grid, &s, 2).unwrap_err().to_string();
        assert!(e.contains("parameter cap"), "{e}");
    }

    fn summary(alpha: f64, nll: f64, acc: f64) -> CellSummary {
        let s = |v| Summary { mean: v, std: 0.0 };
        CellSummary {
            cell: GridCell {
                alpha,
                components: vec![ComponentSpec::background()],
                parameter_count: 0,
            },
            valid_nll: s(nll),
            valid_accuracy: s(acc),
            test_nll: s(0.0),
            test_accuracy: s(0.0),
        }
    }

    #[test]
    fn selection_uses_validation_only() {
        let cells = vec![summary(0.5, 2.0, 0.7), summary(0.9, 1.5, 0.6), summary(0.7, 1.5, 0.8)];
        assert_eq!(select_cell(&cells, Metric::Nll), 1);
        assert_eq!(select_cell(&cells, Metric::Accuracy), 2);
        let tied = vec![summary(0.5, 1.0, 0.5), summary(1.0, 1.0, 0.5), summary(0.95, 1.0, 0.5)];
        assert_eq!(select_cell(&tied, Metric::Nll), 1);
    }

    #[test]
    fn summary_is_population_std() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(Summary::of(&[1.0, f64::INFINITY]).mean, f64::INFINITY);
    }

    #[test]
    fn infinities_survive_json() {
        let r = RunScore {
            cell: 0,
            seed: 1,
            valid_nll: f64::INFINITY,
            valid_accuracy: 0.5,
            test_nll: 1.5,
            test_accuracy: 0.25,
            iterations: 3,
        };
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"valid_nll\":null"));
        assert_eq!(serde_json::from_str::<RunScore>(&text).unwrap(), r);
    }
}
