//! Trace, state, and summary files.
//!
//! Numbers are written with 17 significant digits so that values parsed
//! back for offline recomputation match the in-memory doubles exactly.
//! Column orders are fixed; optional certificate columns append after the
//! core metrics and downstream parsing must not rely on their presence.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use mbadmm::block_vec::BlockVector;
use mbadmm::problem::ProblemSpec;
use mbadmm::solver::{Trace, TracePoint};

use crate::{config_err, CliError};

/// 17 significant digits: exact round trip for 64-bit floats.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row of the per-iteration metrics trace.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub k: usize,
    pub f_val: f64,
    pub aug_lag: f64,
    pub primal_res: f64,
    pub max_image_diff: f64,
    pub x_last_diff: f64,
    pub lambda_diff: f64,
    pub kkt_res: f64,
    /// Aligned with the requested certificate names.
    pub certs: Vec<(bool, f64)>,
}

pub fn write_trace_csv(
    path: &Path,
    cert_names: &[String],
    rows: &[TraceRow],
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str("k,f_val,aug_lag,primal_res,max_image_diff,xN_diff,lambda_diff,kkt_res");
    for name in cert_names {
        out.push_str(&format!(",{name}_pass,{name}_slack"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            row.k,
            fmt17(row.f_val),
            fmt17(row.aug_lag),
            fmt17(row.primal_res),
            fmt17(row.max_image_diff),
            fmt17(row.x_last_diff),
            fmt17(row.lambda_diff),
            fmt17(row.kkt_res)
        ));
        for (pass, slack) in &row.certs {
            out.push_str(&format!(",{},{}", u8::from(*pass), fmt17(*slack)));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Full iterate history: one row per snapshot `w^0..w^K`, columns are the
/// flattened block variables followed by the multiplier.
pub fn write_states_csv(path: &Path, prob: &ProblemSpec, trace: &Trace) -> Result<(), CliError> {
    let mut header = String::from("k");
    for (i, dim) in prob.block_dims().iter().enumerate() {
        for j in 0..*dim {
            header.push_str(&format!(",x{i}_{j}"));
        }
    }
    for r in 0..prob.row_dim() {
        header.push_str(&format!(",lambda_{r}"));
    }
    let mut out = header;
    out.push('\n');
    for k in 0..=trace.len() {
        let pt = trace.point(k);
        out.push_str(&k.to_string());
        for part in pt.x.iter() {
            for v in part.iter() {
                out.push(',');
                out.push_str(&fmt17(*v));
            }
        }
        for v in pt.lambda.iter() {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Reads a state file back into snapshots `w^0..w^K`.
pub fn read_states_csv(path: &Path, prob: &ProblemSpec) -> Result<Vec<TracePoint>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let dims = prob.block_dims();
    let p = prob.row_dim();
    let expect = 1 + prob.total_dim() + p;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with('k') {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expect {
            return Err(config_err(format!(
                "state row {lineno} has {} fields, expected {expect}",
                fields.len()
            )));
        }
        let values: Result<Vec<f64>, _> = fields[1..].iter().map(|s| s.parse::<f64>()).collect();
        let values = values.map_err(|e| config_err(format!("state row {lineno}: {e}")))?;
        let mut at = 0usize;
        let mut parts = Vec::with_capacity(dims.len());
        for &d in &dims {
            parts.push(DVector::from_column_slice(&values[at..at + d]));
            at += d;
        }
        let lambda = DVector::from_column_slice(&values[at..at + p]);
        points.push(TracePoint {
            x: BlockVector::new(parts),
            lambda,
        });
    }
    if points.is_empty() {
        return Err(config_err("state file holds no snapshots"));
    }
    Ok(points)
}

/// Ergodic error series against an oracle solution.
pub fn write_ergodic_csv(path: &Path, rows: &[(usize, f64, f64, f64)]) -> Result<(), CliError> {
    let mut out = String::from("t,ergodic_gap,obj_err,res\n");
    for (t, gap, obj_err, res) in rows {
        out.push_str(&format!(
            "{t},{},{},{}\n",
            fmt17(*gap),
            fmt17(*obj_err),
            fmt17(*res)
        ));
    }
    write_file(path, &out)
}

/// Reads `(first_column, named_column)` pairs from a CSV written above.
pub fn read_csv_column(path: &Path, column: &str) -> Result<Vec<(usize, f64)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| config_err("empty csv file"))?;
    let names: Vec<&str> = header.split(',').collect();
    let idx = names
        .iter()
        .position(|n| *n == column)
        .ok_or_else(|| config_err(format!("column {column:?} not in {names:?}")))?;
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() <= idx {
            return Err(config_err(format!("row {lineno} too short")));
        }
        let key: usize = fields[0]
            .parse()
            .map_err(|e| config_err(format!("row {lineno}: {e}")))?;
        let val: f64 = fields[idx]
            .parse()
            .map_err(|e| config_err(format!("row {lineno}: {e}")))?;
        out.push((key, val));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateSummary {
    pub evaluated: usize,
    pub failures: usize,
    pub worst_slack: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub f_star: f64,
    pub lambda_norm: f64,
    pub method: String,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub gamma: f64,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopped_at: Option<usize>,
    pub converged: bool,
    pub final_objective: f64,
    pub final_primal_residual: f64,
    pub final_kkt_residual: f64,
    pub total_inner_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ergodic_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ergodic_residual: Option<f64>,
    pub certificates: BTreeMap<String, CertificateSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(config_err)?;
    write_file(path, &(text + "\n"))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| config_err(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    let mut file = fs::File::create(path)
        .map_err(|e| config_err(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(content.as_bytes())
        .map_err(|e| config_err(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}
