//! CSV and JSON report writers.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::RunStatus;
use crate::error::{Error, Result};

/// Shortest round-trip representation.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// An in-memory CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv { line: 0, msg: e.to_string() }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// `failures.csv` plus the `status.json` summary.
pub fn write_status(dir: &Path, command: &str, status: &RunStatus) -> Result<()> {
    let mut t = Table::new(&["replicate", "seed", "unit", "error"]);
    for f in &status.failures {
        t.push(vec![f.replicate.to_string(), f.seed.to_string(), f.unit.clone(), f.error.clone()]);
    }
    t.write(&dir.join("failures.csv"))?;
    #[derive(Serialize)]
    struct Status<'a> {
        command: &'a str,
        attempted: usize,
        failed: usize,
        failure_rate: f64,
        valid: bool,
    }
    write_json(
        &dir.join("status.json"),
        &Status { command, attempted: status.attempted, failed: status.failures.len(), failure_rate: status.failure_rate(), valid: status.is_valid() },
    )
}
