//! Deterministic persistence: CSV tables with header and units rows,
//! little-endian binary traces with JSON sidecar metadata, and structured
//! JSON run summaries.
//!
//! Output bytes depend only on the data — no timestamps, no hostnames, no
//! locale. Floats are rounded identically everywhere (9 significant
//! digits, scientific notation), so identical seeds give byte-identical
//! files across platforms. All writes go to a temp file in the target
//! directory followed by an atomic rename, so concurrent jobs never expose
//! partial files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{Psd, Timetrace, PSD_CONVENTION};
use crate::config::RunConfig;
use crate::error::{Error, Result};

/// The documented CSV float rounding: 9 significant digits, scientific.
pub fn format_float(x: f64) -> String {
    format!("{x:.8e}")
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvValue {
    Float(f64),
    Int(i64),
    Text(String),
}

impl CsvValue {
    fn render(&self) -> String {
        match self {
            CsvValue::Float(x) => format_float(*x),
            CsvValue::Int(i) => i.to_string(),
            // commas and quotes are escaped RFC-4180 style
            CsvValue::Text(s) => {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }
}

impl From<f64> for CsvValue {
    fn from(x: f64) -> Self {
        CsvValue::Float(x)
    }
}

impl From<&str> for CsvValue {
    fn from(s: &str) -> Self {
        CsvValue::Text(s.to_string())
    }
}

/// A table destined for one CSV file: `#`-prefixed comment lines, a header
/// row, a units row, then data rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub names: Vec<String>,
    pub units: Vec<String>,
    pub rows: Vec<Vec<CsvValue>>,
}

impl CsvTable {
    pub fn new(columns: &[(&str, &str)]) -> Self {
        CsvTable {
            comments: vec![format!("PSD convention: {PSD_CONVENTION}")],
            names: columns.iter().map(|c| c.0.to_string()).collect(),
            units: columns.iter().map(|c| c.1.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<CsvValue>) -> Result<()> {
        if row.len() != self.names.len() {
            return Err(Error::invalid(format!(
                "row has {} cells, table has {} columns",
                row.len(),
                self.names.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "{}", self.names.join(","));
        let _ = writeln!(out, "{}", self.units.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(CsvValue::render).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Write bytes to `path` atomically: temp file in the same directory, then
/// rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid("output path has no file name"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{file_name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Write a CSV table atomically.
pub fn write_csv(path: &Path, table: &CsvTable) -> Result<()> {
    write_atomic(path, table.render().as_bytes())
}

/// Sidecar metadata accompanying a binary trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub name: String,
    pub unit: String,
    /// Always "f64le": IEEE-754 double, little endian, no header.
    pub dtype: String,
    pub n_samples: usize,
    /// Hz.
    pub sample_rate: f64,
    /// s.
    pub start_time: f64,
    pub psd_convention: String,
}

/// Write `trace` as raw little-endian f64 at `path` (conventionally
/// `*.f64`) plus a JSON sidecar at `path + ".json"`.
pub fn write_trace(path: &Path, trace: &Timetrace, name: &str, unit: &str) -> Result<()> {
    let mut bytes = Vec::with_capacity(trace.len() * 8);
    for &x in &trace.samples {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_atomic(path, &bytes)?;
    let meta = TraceMeta {
        name: name.to_string(),
        unit: unit.to_string(),
        dtype: "f64le".to_string(),
        n_samples: trace.len(),
        sample_rate: trace.sample_rate,
        start_time: trace.start_time,
        psd_convention: PSD_CONVENTION.to_string(),
    };
    write_atomic(
        &sidecar_path(path),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

/// Read back a binary trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<(Timetrace, TraceMeta)> {
    let meta: TraceMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let bytes = std::fs::read(path)?;
    if bytes.len() != meta.n_samples * 8 {
        return Err(Error::invalid(format!(
            "trace file has {} bytes, sidecar declares {} samples",
            bytes.len(),
            meta.n_samples
        )));
    }
    let samples: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Timetrace::new(meta.sample_rate, meta.start_time, samples)?, meta))
}

/// Write a PSD as a two-column CSV.
pub fn write_psd_csv(path: &Path, psd: &Psd, unit: &str) -> Result<()> {
    let mut table = CsvTable::new(&[("frequency", "Hz"), ("psd", unit)]);
    table
        .comments
        .push(format!("segments averaged: {}", psd.n_segments_averaged));
    for (k, &v) in psd.values.iter().enumerate() {
        table.push(vec![CsvValue::Float(k as f64 * psd.df), CsvValue::Float(v)])?;
    }
    write_csv(path, &table)
}

/// Machine-readable summary of one CLI run: resolved configuration,
/// derived quantities, and produced artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub psd_convention: String,
    pub config: RunConfig,
    /// Derived scalar results, keyed by a documented name (sorted map so
    /// the serialization is stable).
    pub derived: BTreeMap<String, f64>,
    /// Files written by the run, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl RunSummary {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunSummary {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            psd_convention: PSD_CONVENTION.to_string(),
            config: config.clone(),
            derived: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}
