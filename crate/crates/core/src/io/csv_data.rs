//! Categorical CSV ingestion.
//!
//! Every column is a categorical feature. Values get indices in order of
//! first appearance, so the encoding of a file is stable when rows are
//! appended.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{MultiIndex, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvOptions {
    pub has_header: bool,
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            has_header: true,
            delimiter: b',',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub categories: Vec<String>,
}

/// Category lists per feature plus the optional class mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalSchema {
    pub features: Vec<Feature>,
    #[serde(default)]
    pub target: Option<usize>,
}

impl CategoricalSchema {
    pub fn new(features: Vec<Feature>, target: Option<usize>) -> Result<Self> {
        let s = CategoricalSchema { features, target };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::domain("schema has no features"));
        }
        for f in &self.features {
            if f.categories.is_empty() {
                return Err(Error::domain(format!("feature {:?} has no categories", f.name)));
            }
            let mut seen = std::collections::HashSet::new();
            for c in &f.categories {
                if !seen.insert(c) {
                    return Err(Error::domain(format!(
                        "feature {:?} lists category {c:?} twice",
                        f.name
                    )));
                }
            }
        }
        if let Some(t) = self.target {
            if t >= self.features.len() {
                return Err(Error::domain(format!("target feature {t} out of range")));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.features.iter().map(|f| f.categories.len()).collect())
            .expect("validated schema has nonempty categories")
    }

    pub fn ndim(&self) -> usize {
        self.features.len()
    }

    /// Category label of `index` in feature `d`.
    pub fn category(&self, d: usize, index: usize) -> Option<&str> {
        self.features.get(d)?.categories.get(index).map(String::as_str)
    }

    /// Drops the target feature, giving the schema of the inputs.
    pub fn without_target(&self) -> Option<CategoricalSchema> {
        let t = self.target?;
        let mut features = self.features.clone();
        features.remove(t);
        Some(CategoricalSchema { features, target: None })
    }
}

/// Reads a categorical CSV file.
pub fn load_csv(path: impl AsRef<Path>, options: CsvOptions) -> Result<(Vec<MultiIndex>, CategoricalSchema)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, options, None, true).map_err(|e| attach_path(e, path))
}

/// Reads a CSV file against an existing schema. With `extend`, unknown
/// categories are appended to the schema; otherwise they are errors.
pub fn load_csv_with_schema(
    path: impl AsRef<Path>,
    options: CsvOptions,
    schema: &CategoricalSchema,
    extend: bool,
) -> Result<(Vec<MultiIndex>, CategoricalSchema)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, options, Some(schema), extend).map_err(|e| attach_path(e, path))
}

/// Reads a CSV file whose cells are already zero-based indices into `shape`.
pub fn load_indexed_csv(path: impl AsRef<Path>, options: CsvOptions, shape: &Shape) -> Result<Vec<MultiIndex>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_indexed(file, options, shape).map_err(|e| attach_path(e, path))
}

fn attach_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Domain(message) => Error::format(path, message),
        other => other,
    }
}

fn reader<R: Read>(input: R, options: CsvOptions) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .delimiter(options.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Row number as a user sees it in the file (1-based, header included).
fn row_number(record: &csv::StringRecord, fallback: usize) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(fallback as u64)
}

pub fn read_csv<R: Read>(
    input: R,
    options: CsvOptions,
    schema: Option<&CategoricalSchema>,
    extend: bool,
) -> Result<(Vec<MultiIndex>, CategoricalSchema)> {
    let mut rdr = reader(input, options);
    let header: Option<Vec<String>> = if options.has_header {
        let h = rdr.headers().map_err(|e| Error::domain(format!("cannot read header: {e}")))?;
        if h.is_empty() {
            None
        } else {
            Some(h.iter().map(str::to_string).collect())
        }
    } else {
        None
    };

    let mut features: Vec<Feature> = schema.map(|s| s.features.clone()).unwrap_or_default();
    let mut lookup: Vec<HashMap<String, usize>> = features
        .iter()
        .map(|f| f.categories.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect())
        .collect();
    let mut width = schema.map(|s| s.ndim()).or(header.as_ref().map(Vec::len));
    let mut samples = Vec::new();

    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::domain(format!("malformed CSV: {e}")))?;
        let line = row_number(&rec, n + 1);
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::domain(format!(
                "row {line}: expected {w} fields, found {}",
                rec.len()
            )));
        }
        if features.is_empty() {
            features = (0..w)
                .map(|d| Feature {
                    name: header
                        .as_ref()
                        .and_then(|h| h.get(d).cloned())
                        .unwrap_or_else(|| format!("f{d}")),
                    categories: Vec::new(),
                })
                .collect();
            lookup = vec![HashMap::new(); w];
        }
        let mut idx = Vec::with_capacity(w);
        for (d, cell) in rec.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::domain(format!(
                    "row {line}: empty value in column {:?}",
                    features[d].name
                )));
            }
            let i = match lookup[d].get(cell) {
                Some(&i) => i,
                None if schema.is_none() || extend => {
                    let i = features[d].categories.len();
                    features[d].categories.push(cell.to_string());
                    lookup[d].insert(cell.to_string(), i);
                    i
                }
                None => {
                    return Err(Error::domain(format!(
                        "row {line}: unknown category {cell:?} in column {:?}",
                        features[d].name
                    )))
                }
            };
            idx.push(i);
        }
        samples.push(MultiIndex(idx));
    }
    if samples.is_empty() {
        return Err(Error::domain("file contains no data rows"));
    }
    let target = schema.and_then(|s| s.target).or(Some(features.len() - 1));
    Ok((samples, CategoricalSchema { features, target }))
}

pub fn read_indexed<R: Read>(input: R, options: CsvOptions, shape: &Shape) -> Result<Vec<MultiIndex>> {
    let mut rdr = reader(input, options);
    let mut samples = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::domain(format!("malformed CSV: {e}")))?;
        let line = row_number(&rec, n + 1);
        if rec.len() != shape.ndim() {
            return Err(Error::domain(format!(
                "row {line}: expected {} fields, found {}",
                shape.ndim(),
                rec.len()
            )));
        }
        let idx = rec
            .iter()
            .enumerate()
            .map(|(d, cell)| {
                if cell.is_empty() {
                    return Err(Error::domain(format!("row {line}: empty value in column {d}")));
                }
                cell.parse::<usize>()
                    .map_err(|_| Error::domain(format!("row {line}: {cell:?} is not a nonnegative integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        shape
            .check_index(&idx)
            .map_err(|e| Error::domain(format!("row {line}: {e}")))?;
        samples.push(MultiIndex(idx));
    }
    if samples.is_empty() {
        return Err(Error::domain("file contains no data rows"));
    }
    Ok(samples)
}

/// Writes samples back out. With a schema the category labels are written,
/// otherwise the raw indices.
pub fn write_csv<W: Write>(
    out: W,
    samples: &[MultiIndex],
    schema: Option<&CategoricalSchema>,
    delimiter: u8,
) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    let ndim = schema
        .map(CategoricalSchema::ndim)
        .or_else(|| samples.first().map(|s| s.len()))
        .unwrap_or(0);
    let header: Vec<String> = match schema {
        Some(s) => s.features.iter().map(|f| f.name.clone()).collect(),
        None => (0..ndim).map(|d| format!("f{d}")).collect(),
    };
    let wrap = |e: csv::Error| Error::domain(format!("cannot write CSV: {e}"));
    wtr.write_record(&header).map_err(wrap)?;
    for s in samples {
        let row: Vec<String> = match schema {
            Some(sc) => s
                .iter()
                .enumerate()
                .map(|(d, &i)| {
                    sc.category(d, i)
                        .map(str::to_string)
                        .ok_or_else(|| Error::domain(format!("index {i} out of range for feature {d}")))
                })
                .collect::<Result<_>>()?,
            None => s.iter().map(usize::to_string).collect(),
        };
        wtr.write_record(&row).map_err(wrap)?;
    }
    wtr.flush().map_err(|e| Error::domain(format!("cannot write CSV: {e}")))?;
    Ok(())
}

pub fn save_csv(
    path: impl AsRef<Path>,
    samples: &[MultiIndex],
    schema: Option<&CategoricalSchema>,
    delimiter: u8,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), samples, schema, delimiter)
}
