//! Line-delimited JSON traces: one record per line with `iteration`,
//! `objective`, `weights` and `elapsed_seconds`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::e2m::{FitTrace, TraceRecord};
use crate::error::{Error, Result};

pub fn write_trace<W: Write>(mut out: W, trace: &FitTrace) -> std::io::Result<()> {
    for r in &trace.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_trace(path: impl AsRef<Path>, trace: &FitTrace) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(BufWriter::new(file), trace).map_err(|e| Error::io(path, e))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TraceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        records.push(r);
    }
    Ok(records)
}
