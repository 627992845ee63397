use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, LevelFilter};

use tensormix::io::{
    half_moons, load_csv, load_csv_with_schema, load_dense_grid, load_indexed_csv, load_model, save_csv, save_model,
    save_trace, synth_lowrank, CategoricalSchema, CsvOptions, SyntheticSpec,
};
use tensormix::tasks::{accuracy, classify, evaluate_density, grid_search, GridSpec, Metric};
use tensormix::{
    alpha_divergence, build_empirical, fit, ComponentKind, EmpiricalTensor, Error, FitConfig, FitTrace, MixtureModel,
    MultiIndex, Shape,
};

#[derive(Debug, Parser)]
#[command(name = "tensormix", version, about = "Mixtures of low-rank tensors for discrete densities")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct CsvArgs {
    /// The CSV file has no header row.
    #[arg(long)]
    no_header: bool,

    /// Field delimiter.
    #[arg(long, default_value_t = ',')]
    delimiter: char,

    /// Read cells as zero-based integers into this shape (e.g. 8,8,8)
    /// instead of encoding them as categories.
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<usize>>,
}

impl CsvArgs {
    fn options(&self) -> Result<CsvOptions, Error> {
        if !self.delimiter.is_ascii() {
            return Err(Error::Domain(format!("delimiter {:?} is not ASCII", self.delimiter)));
        }
        Ok(CsvOptions {
            has_header: !self.no_header,
            delimiter: self.delimiter as u8,
        })
    }

    fn shape(&self) -> Result<Option<Shape>, Error> {
        self.shape.clone().map(Shape::new).transpose()
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a mixture to a CSV file of samples.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// TOML file with alpha, components and stopping rule.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        out_trace: Option<PathBuf>,
        #[command(flatten)]
        csv: CsvArgs,
    },
    /// Negative log-likelihood of samples under a saved model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        csv: CsvArgs,
    },
    /// Predict the last mode from the others.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write one prediction per row to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        csv: CsvArgs,
    },
    /// Draw samples from a random low-rank distribution.
    Synth {
        #[arg(long, value_parser = ["cp", "tt", "moons"])]
        kind: String,
        #[arg(long, value_delimiter = ',', required_unless_present = "grid")]
        shape: Option<Vec<usize>>,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        /// Weight of the uniform background.
        #[arg(long, default_value_t = 0.10)]
        bg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n: usize,
        /// Grid size for `--kind moons`.
        #[arg(long)]
        grid: Option<usize>,
        /// Outliers added in the corners for `--kind moons`.
        #[arg(long, default_value_t = 0)]
        outliers: usize,
        /// Flipped labels for `--kind moons`.
        #[arg(long, default_value_t = 0)]
        flipped: usize,
        #[arg(long)]
        out: PathBuf,
        /// Save the generating model.
        #[arg(long)]
        out_true: Option<PathBuf>,
    },
    /// Validation-driven search over alpha and ranks.
    Grid {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// TOML grid description.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "nll")]
        metric: String,
        /// JSON report.
        #[arg(long)]
        out_report: PathBuf,
        /// Flat CSV table with one row per fit plus aggregates.
        #[arg(long)]
        out_table: Option<PathBuf>,
        /// Worker threads; overrides the grid file.
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        csv: CsvArgs,
    },
    /// Fit a dense nonnegative tensor (normalized first).
    Reconstruct {
        /// Shape header line followed by whitespace-separated values.
        #[arg(long)]
        dense: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_trace: Option<PathBuf>,
        #[arg(long)]
        out_model: Option<PathBuf>,
    },
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn report_fit(trace: &FitTrace, model: &MixtureModel) {
    println!("objective={}", trace.final_objective().unwrap_or(f64::NAN));
    println!("iterations={}", trace.iterations());
    if let Some(r) = trace.stop_reason {
        let r = serde_json::to_value(r).expect("serializable");
        println!("stop_reason={}", r.as_str().unwrap_or_default());
    }
    println!("eta={}", join(model.weights()));
    println!("components={}", join(&model.specs()));
}

fn save_trace_every(path: &Path, trace: &FitTrace, every: usize) -> Result<(), Error> {
    let last = trace.records.len().saturating_sub(1);
    let kept = FitTrace {
        records: trace
            .records
            .iter()
            .filter(|r| r.iteration % every == 0 || r.iteration == last)
            .cloned()
            .collect(),
        stop_reason: trace.stop_reason,
    };
    save_trace(path, &kept)
}

/// Samples plus the schema that encoded them (none for integer input).
fn read_samples(
    path: &Path,
    csv: &CsvArgs,
    schema: Option<&CategoricalSchema>,
    model_shape: Option<&Shape>,
) -> Result<(Vec<MultiIndex>, Option<CategoricalSchema>), Error> {
    let opts = csv.options()?;
    if let Some(shape) = csv.shape()?.or_else(|| if schema.is_none() { model_shape.cloned() } else { None }) {
        return Ok((load_indexed_csv(path, opts, &shape)?, None));
    }
    match schema {
        Some(s) => {
            let (samples, s) = load_csv_with_schema(path, opts, s, false)?;
            Ok((samples, Some(s)))
        }
        None => {
            let (samples, s) = load_csv(path, opts)?;
            Ok((samples, Some(s)))
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Fit {
            data,
            config,
            out_model,
            out_trace,
            csv,
        } => {
            let cfg: FitConfig = read_toml(&config)?;
            let (samples, schema) = read_samples(&data, &csv, None, None)?;
            let shape = match &schema {
                Some(s) => s.shape(),
                None => csv.shape()?.expect("integer input always has a shape"),
            };
            let t = build_empirical(&samples, &shape)?;
            info!("fitting {} samples, {} distinct, shape {}", samples.len(), t.nnz(), shape);
            let (model, trace) = fit(&t, &cfg)?;
            save_model(&out_model, &model, schema.as_ref())?;
            if let Some(p) = out_trace {
                save_trace_every(&p, &trace, cfg.trace_every)?;
            }
            report_fit(&trace, &model);
            let values = model.eval_support(&t);
            println!("kl={}", alpha_divergence(&t, &values, tensormix::Alpha::KL)?);
        }
        Command::Eval { model, data, csv } => {
            let (m, schema) = load_model(&model)?;
            let (samples, _) = read_samples(&data, &csv, schema.as_ref(), Some(m.shape()))?;
            if let Some(n) = samples.iter().position(|s| !(m.eval(s) > 0.0)) {
                return Err(Error::Domain(format!(
                    "{}: data row {} {:?}: model assigns zero mass to this sample",
                    data.display(),
                    n + 1,
                    samples[n].0
                )));
            }
            let score = evaluate_density(&m, &samples)?;
            println!("samples={}", score.count);
            println!("nll_total={}", score.total);
            println!("nll_mean={}", score.mean);
        }
        Command::Classify { model, data, out, csv } => {
            let (m, schema) = load_model(&model)?;
            let d = m.shape().ndim();
            let opts = csv.options()?;
            // labeled rows carry every mode; feature rows drop the last one
            let width = peek_width(&data, opts)?;
            let labeled = width == d;
            if !labeled && width + 1 != d {
                return Err(Error::Domain(format!(
                    "{}: rows have {width} fields, model expects {} features or {d} with the label",
                    data.display(),
                    d - 1
                )));
            }
            let samples = if labeled {
                read_samples(&data, &csv, schema.as_ref(), Some(m.shape()))?.0
            } else {
                let feature_shape = Shape::new(m.shape().dims()[..d - 1].to_vec())?;
                let feature_schema = schema.as_ref().and_then(CategoricalSchema::without_target);
                read_samples(&data, &csv, feature_schema.as_ref(), Some(&feature_shape))?.0
            };
            let mut predictions = Vec::with_capacity(samples.len());
            for s in &samples {
                let features = if labeled { &s[..d - 1] } else { &s[..] };
                predictions.push(classify(&m, features)?);
            }
            let label = |c: usize| -> String {
                schema
                    .as_ref()
                    .and_then(|s| s.category(d - 1, c))
                    .map(str::to_string)
                    .unwrap_or_else(|| c.to_string())
            };
            match out {
                Some(p) => {
                    let file = File::create(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                    let mut w = csv::Writer::from_writer(BufWriter::new(file));
                    let wrap = |e: csv::Error| Error::Domain(format!("cannot write predictions: {e}"));
                    w.write_record(["row", "prediction"]).map_err(wrap)?;
                    for (n, c) in predictions.iter().enumerate() {
                        w.write_record([(n + 1).to_string(), label(*c)]).map_err(wrap)?;
                    }
                    w.flush().map_err(|e| Error::Io { path: p.clone(), source: e })?;
                }
                None => {
                    for (n, c) in predictions.iter().enumerate() {
                        println!("prediction.{}={}", n + 1, label(*c));
                    }
                }
            }
            println!("samples={}", samples.len());
            if labeled {
                println!("accuracy={}", accuracy(&m, &samples)?);
            }
        }
        Command::Synth {
            kind,
            shape,
            rank,
            bg,
            seed,
            n,
            grid,
            outliers,
            flipped,
            out,
            out_true,
        } => {
            if kind == "moons" {
                let spec = tensormix::io::MoonSpec {
                    samples: n,
                    grid: grid.unwrap_or(90),
                    outliers,
                    flipped,
                    seed,
                    ..Default::default()
                };
                let (_, samples) = half_moons(&spec)?;
                save_csv(&out, &samples, None, b',')?;
                println!("samples={}", samples.len());
                println!("shape={}", join(&[spec.grid, spec.grid, 2]));
                return Ok(());
            }
            let spec = SyntheticSpec {
                kind: kind.parse::<ComponentKind>()?,
                shape: Shape::new(shape.unwrap_or_default())?,
                rank,
                background_weight: bg,
                seed,
            };
            let (model, sampler) = synth_lowrank(&spec)?;
            let samples = sampler.sample_seeded(n, seed);
            save_csv(&out, &samples, None, b',')?;
            if let Some(p) = out_true {
                save_model(&p, &model, None)?;
            }
            println!("samples={n}");
            println!("shape={}", join(spec.shape.dims()));
            println!("eta={}", join(model.weights()));
        }
        Command::Grid {
            train,
            valid,
            test,
            grid,
            metric,
            out_report,
            out_table,
            jobs,
            csv,
        } => {
            let mut spec: GridSpec = read_toml(&grid)?;
            if jobs.is_some() {
                spec.jobs = jobs;
            }
            let metric: Metric = metric.parse()?;
            let opts = csv.options()?;
            let (train_s, valid_s, test_s, shape) = match csv.shape()? {
                Some(shape) => (
                    load_indexed_csv(&train, opts, &shape)?,
                    load_indexed_csv(&valid, opts, &shape)?,
                    load_indexed_csv(&test, opts, &shape)?,
                    shape,
                ),
                None => {
                    // one schema spanning all three splits
                    let (a, s) = load_csv(&train, opts)?;
                    let (b, s) = load_csv_with_schema(&valid, opts, &s, true)?;
                    let (c, s) = load_csv_with_schema(&test, opts, &s, true)?;
                    (a, b, c, s.shape())
                }
            };
            let report = grid_search(&train_s, &valid_s, &test_s, &shape, &spec, metric)?;
            std::fs::write(&out_report, report.to_json() + "\n").map_err(|e| Error::Io {
                path: out_report.clone(),
                source: e,
            })?;
            if let Some(p) = out_table {
                let file = File::create(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                report.write_table(BufWriter::new(file))?;
            }
            let sel = report.selected_cell();
            println!("cells={}", report.cells.len());
            println!("selected={}", report.selected);
            println!("alpha={}", sel.cell.alpha);
            println!("components={}", join(&sel.cell.components));
            println!("test_nll_mean={}", sel.test_nll.mean);
            println!("test_nll_std={}", sel.test_nll.std);
            println!("test_accuracy_mean={}", sel.test_accuracy.mean);
            println!("test_accuracy_std={}", sel.test_accuracy.std);
        }
        Command::Reconstruct {
            dense,
            config,
            out_trace,
            out_model,
        } => {
            let cfg: FitConfig = read_toml(&config)?;
            let grid = load_dense_grid(&dense)?;
            let t = EmpiricalTensor::from_dense(&grid)?;
            let (model, trace) = fit(&t, &cfg)?;
            if let Some(p) = out_trace {
                save_trace_every(&p, &trace, cfg.trace_every)?;
            }
            if let Some(p) = out_model {
                save_model(&p, &model, None)?;
            }
            report_fit(&trace, &model);
        }
    }
    Ok(())
}

fn peek_width(path: &Path, opts: CsvOptions) -> Result<usize, Error> {
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .delimiter(opts.delimiter)
        .flexible(true)
        .from_reader(file);
    let mut rec = csv::StringRecord::new();
    match rdr.read_record(&mut rec) {
        Ok(true) => Ok(rec.len()),
        Ok(false) => Err(Error::Format {
            path: path.to_path_buf(),
            message: "file contains no data rows".into(),
        }),
        Err(e) => Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("malformed CSV: {e}"),
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_internal() { 3 } else { 2 })
        }
    }
}
