//! Line-delimited JSON files: one instance (or solution record) per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CoreError, Instance, Result, Solution};

pub fn read_instances(path: &Path) -> Result<Vec<Instance>> {
    read_jsonl(path)
}

pub fn write_instances(path: &Path, instances: &[Instance]) -> Result<()> {
    write_jsonl(path, instances)
}

/// A solved instance as written by `solve` and read by `plot`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub instance: usize,
    pub method: String,
    pub length: f64,
    pub solution: Solution,
}

pub fn read_solutions(path: &Path) -> Result<Vec<SolutionRecord>> {
    read_jsonl(path)
}

pub fn write_solutions(path: &Path, records: &[SolutionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
