//! CSV and manifest emission.
//!
//! Trace CSVs carry the fixed header
//! `step,time_s,p_h,p_f,y_d,y_q,du_d,du_q,v_dev_d,v_dev_q`; floats are
//! serialized with 17 significant digits so re-parsing reproduces the f64
//! bits exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use afd_core::sim::TraceRecord;

use crate::config::RunConfig;
use crate::CliError;

pub const TRACE_HEADER: &str = "step,time_s,p_h,p_f,y_d,y_q,du_d,du_q,v_dev_d,v_dev_q";

/// 17-significant-digit scientific form; round-trip exact for f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn emit_csv(records: &[TraceRecord], path: &Path) -> Result<(), CliError> {
    let mut text = String::with_capacity(64 * (records.len() + 1));
    text.push_str(TRACE_HEADER);
    text.push('\n');
    for r in records {
        let fields = [
            r.step.to_string(),
            fmt_f64(r.time_s),
            fmt_f64(r.p_h),
            fmt_f64(r.p_f),
            fmt_f64(r.y[0]),
            fmt_f64(r.y[1]),
            fmt_f64(r.delta_u[0]),
            fmt_f64(r.delta_u[1]),
            fmt_f64(r.v_dev[0]),
            fmt_f64(r.v_dev[1]),
        ];
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

/// Parse a trace CSV back into (step, floats) rows; used by round-trip tests.
#[cfg(test)]
pub fn parse_trace_csv(text: &str) -> Result<Vec<(usize, Vec<f64>)>, CliError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Runtime("empty trace CSV".into()))?;
    if header != TRACE_HEADER {
        return Err(CliError::Runtime(format!("unexpected header: {header}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let mut parts = line.split(',');
        let step: usize = parts
            .next()
            .ok_or_else(|| CliError::Runtime("short row".into()))?
            .parse()
            .map_err(|e| CliError::Runtime(format!("bad step: {e}")))?;
        let floats: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        rows.push((
            step,
            floats.map_err(|e| CliError::Runtime(format!("bad float: {e}")))?,
        ));
    }
    Ok(rows)
}

/// A generic summary table with its own header.
pub fn emit_table(header: &[&str], rows: &[Vec<String>], path: &Path) -> Result<(), CliError> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("create {}: {e}", parent.display())))?;
    }
    let mut f = fs::File::create(path)
        .map_err(|e| CliError::Runtime(format!("create {}: {e}", path.display())))?;
    f.write_all(bytes)
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
}

/// Run manifest: everything needed to regenerate the CSVs plus timing
/// measurements (the one non-reproducible section).
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::Runtime(format!("manifest: {e}")))?;
    write_file(path, text.as_bytes())
}
