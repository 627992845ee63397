//! Dense numeric grid files: a header line with the shape, then the values
//! in row-major order separated by any whitespace.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Shape};

pub fn parse_dense_grid(text: &str) -> Result<DenseTensor> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::domain("dense grid file is empty"))?;
    let dims = header
        .split(|c: char| c.is_whitespace() || c == ',' || c == 'x')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::domain(format!("shape header: {t:?} is not a positive integer")))
        })
        .collect::<Result<Vec<_>>>()?;
    let shape = Shape::new(dims)?;
    let values = lines
        .flat_map(str::split_whitespace)
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::domain(format!("{t:?} is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    DenseTensor::new(shape, values)
}

pub fn load_dense_grid(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dense_grid(&text).map_err(|e| match e {
        Error::Domain(m) => Error::format(path, m),
        other => other,
    })
}
