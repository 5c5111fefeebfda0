//! CSV rows and JSON summaries.

use std::io::{Read, Write};

use dsbo_core::runner::MetricsSeries;
use serde::{Deserialize, Serialize};

pub const COLUMNS: [&str; 12] = [
    "run_id",
    "k",
    "mu",
    "grad_psi_sq",
    "consensus_x",
    "consensus_y",
    "consensus_theta",
    "consensus_total",
    "rel_err_x",
    "rel_err_y",
    "mix_ops_cumulative",
    "wall_ms",
];

/// One recorded iteration as written to disk. Metric fields are empty on gap
/// rows; relative errors are empty without a reference solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecordRow {
    pub run_id: String,
    pub k: usize,
    pub mu: f64,
    pub grad_psi_sq: Option<f64>,
    pub consensus_x: Option<f64>,
    pub consensus_y: Option<f64>,
    pub consensus_theta: Option<f64>,
    pub consensus_total: Option<f64>,
    pub rel_err_x: Option<f64>,
    pub rel_err_y: Option<f64>,
    pub mix_ops_cumulative: u64,
    pub wall_ms: f64,
}

pub fn rows_from_series(run_id: &str, series: &MetricsSeries) -> Vec<OutputRecordRow> {
    series
        .rows
        .iter()
        .map(|r| OutputRecordRow {
            run_id: run_id.to_owned(),
            k: r.k,
            mu: r.mu,
            grad_psi_sq: r.record.map(|m| m.grad_psi_sq),
            consensus_x: r.record.map(|m| m.consensus_x),
            consensus_y: r.record.map(|m| m.consensus_y),
            consensus_theta: r.record.map(|m| m.consensus_theta),
            consensus_total: r.record.map(|m| m.consensus_total),
            rel_err_x: r.rel_err_x,
            rel_err_y: r.rel_err_y,
            mix_ops_cumulative: r.mix_ops_cumulative,
            wall_ms: r.wall_ms,
        })
        .collect()
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

/// Write the header and every row.
pub fn write_rows<W: Write>(out: W, rows: &[OutputRecordRow]) -> csv::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.k.to_string(),
            fmt_f64(r.mu),
            fmt_opt(r.grad_psi_sq),
            fmt_opt(r.consensus_x),
            fmt_opt(r.consensus_y),
            fmt_opt(r.consensus_theta),
            fmt_opt(r.consensus_total),
            fmt_opt(r.rel_err_x),
            fmt_opt(r.rel_err_y),
            r.mix_ops_cumulative.to_string(),
            fmt_f64(r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> csv::Result<Vec<OutputRecordRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Generic table writer for aggregate outputs.
pub fn write_table<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> csv::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
