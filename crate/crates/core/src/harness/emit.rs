//! CSV / JSON output and the run manifest.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::run::StepRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

pub fn to_csv(records: &[StepRecord]) -> Result<String> {
    let first = records.first().ok_or_else(|| Error::Validation("no records to emit".into()))?;
    let n = first.xhat.len();
    let mut out = String::from("k");
    for i in 0..n {
        write!(out, ",xhat{i}").unwrap();
    }
    out.push_str(",sigma,rank,pvol,ssal,err,contained,cases,ms\n");
    for r in records {
        write!(out, "{}", r.k).unwrap();
        for x in &r.xhat {
            write!(out, ",{x:e}").unwrap();
        }
        writeln!(
            out,
            ",{:e},{},{:e},{:e},{:e},{},{},{}",
            r.sigma,
            r.rank,
            r.pvol,
            r.ssal,
            r.err,
            if r.contained { 1 } else { 0 },
            r.cases,
            r.ms
        )
        .unwrap();
    }
    Ok(out)
}

pub fn to_json(records: &[StepRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Validation("no records to emit".into()));
    }
    serde_json::to_string_pretty(records).map_err(|e| Error::Io(e.to_string()))
}

pub fn from_json(text: &str) -> Result<Vec<StepRecord>> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub scenario: String,
    pub pred: String,
    pub corr: String,
    pub policy: String,
    pub samples: usize,
    pub format: Format,
    pub output: String,
}

/// Writes `run.<ext>` and `manifest.json` into `dir`; returns the data file path.
pub fn emit(records: &[StepRecord], format: Format, dir: &Path, manifest: &Manifest) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let body = match format {
        Format::Csv => to_csv(records)?,
        Format::Json => to_json(records)?,
    };
    let path = dir.join(format!("run.{}", format.extension()));
    std::fs::write(&path, body)?;
    let manifest_text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), manifest_text)?;
    Ok(path)
}
