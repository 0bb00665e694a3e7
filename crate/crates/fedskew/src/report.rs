//! Report files. Everything except results.json is rendered from the
//! [`ExperimentReport`] alone, so `report` can regenerate it bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::experiment::ExperimentReport;
use crate::svg::render_figure;

pub const RESULTS_JSON: &str = "results.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const CROSS_MATRIX_CSV: &str = "cross_matrix.csv";

const CSV_HEADER: [&str; 9] = [
    "partition_id",
    "protocol",
    "mitigations",
    "trial",
    "seed",
    "test_accuracy",
    "drop_rate",
    "ks",
    "quantity_std",
];

#[derive(Serialize)]
struct Row<'a> {
    partition_id: &'a str,
    protocol: &'a str,
    mitigations: String,
    trial: usize,
    seed: u64,
    test_accuracy: f64,
    drop_rate: Option<f64>,
    ks: f64,
    quantity_std: f64,
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Runtime(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Runtime(format!("csv: {e}")))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Runtime(format!("csv: {e}"))
}

/// One row per (cell, trial); drop rates are relative, in percent.
pub fn render_results_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for cell in &report.cells {
        for t in &cell.trials {
            w.serialize(Row {
                partition_id: &cell.partition_id,
                protocol: &cell.protocol_id,
                mitigations: cell.mitigations.to_string(),
                trial: t.trial,
                seed: t.seed,
                test_accuracy: t.result.test_accuracy,
                drop_rate: t.result.drop_rate.as_ref().map(|d| d.value),
                ks: t.ks,
                quantity_std: t.quantity_std,
            })
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// Long-format matrices, or `None` when none were collected.
pub fn render_cross_matrix_csv(report: &ExperimentReport) -> Result<Option<String>> {
    let any = report
        .cells
        .iter()
        .flat_map(|c| &c.trials)
        .any(|t| !t.result.cross_matrix.is_empty());
    if !any {
        return Ok(None);
    }
    let mut w = csv_writer();
    w.write_record([
        "partition_id",
        "protocol",
        "trial",
        "model_institution",
        "test_institution",
        "accuracy",
    ])
    .map_err(csv_err)?;
    for cell in &report.cells {
        for t in &cell.trials {
            for (i, row) in t.result.cross_matrix.iter().enumerate() {
                for (j, acc) in row.iter().enumerate() {
                    w.serialize((&cell.partition_id, &cell.protocol_id, t.trial, i, j, acc))
                        .map_err(csv_err)?;
                }
            }
        }
    }
    finish(w).map(Some)
}

pub fn render_results_json(report: &ExperimentReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Runtime(format!("results.json: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn figure_file(figure: &str) -> String {
    format!("figure-{figure}.svg")
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(Error::io(&path))?;
    written.push(path);
    Ok(())
}

/// Writes results.json, results.csv, one SVG per figure and, when matrices
/// were kept, cross_matrix.csv. Returns the paths written.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut written = Vec::new();
    write(
        dir,
        RESULTS_JSON,
        &render_results_json(report)?,
        &mut written,
    )?;
    render_outputs(report, dir, &mut written)?;
    Ok(written)
}

fn render_outputs(report: &ExperimentReport, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    write(dir, RESULTS_CSV, &render_results_csv(report)?, written)?;
    if let Some(m) = render_cross_matrix_csv(report)? {
        write(dir, CROSS_MATRIX_CSV, &m, written)?;
    }
    for figure in report.figures() {
        write(
            dir,
            &figure_file(&figure),
            &render_figure(report, &figure),
            written,
        )?;
    }
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<ExperimentReport> {
    let path = dir.join(RESULTS_JSON);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    serde_json::from_str(&text).map_err(|e| invalid!("{}: {}", path.display(), e))
}

/// Regenerates the CSV and SVG outputs of a results directory from its results.json.
pub fn regenerate(dir: &Path) -> Result<Vec<PathBuf>> {
    let report = read_report(dir)?;
    let mut written = Vec::new();
    render_outputs(&report, dir, &mut written)?;
    Ok(written)
}
