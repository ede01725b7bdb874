//! Report files. Floats are written in shortest round-trip form, so parsing
//! `runs.csv` and re-aggregating reproduces `aggregate.csv` byte for byte.
//!
//! | file | contents |
//! |------|----------|
//! | `runs.csv` | one row per (cut-point, seed) |
//! | `aggregate.csv` | test-accuracy statistics per cut-point |
//! | `layers.csv` | statistics plus feature length, parameter counts, status |
//! | `plot_data.csv` | cut-point, mean, std |
//! | `summary.json` | the whole report |

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use super::stats::{aggregate_runs, AccuracyStats};
use super::{ExperimentError, RunRow, SweepReport};

pub const REPORT_FILES: [&str; 5] = ["runs.csv", "aggregate.csv", "layers.csv", "plot_data.csv", "summary.json"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub runs: PathBuf,
    pub aggregate: PathBuf,
    pub layers: PathBuf,
    pub plot_data: PathBuf,
    pub summary: PathBuf,
}

fn table<const N: usize>(header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn render_runs_csv(rows: &[RunRow]) -> String {
    table(
        ["cut_point", "seed", "eval_accuracy", "test_accuracy", "selected_epoch", "feature_length"],
        rows.iter().map(|r| {
            [
                r.cut_point.clone(),
                r.seed.to_string(),
                r.eval_accuracy.to_string(),
                r.test_accuracy.to_string(),
                r.selected_epoch.to_string(),
                r.feature_length.to_string(),
            ]
        }),
    )
}

pub fn parse_runs_csv(text: &str) -> Result<Vec<RunRow>, ExperimentError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| ExperimentError::Config(format!("runs table row {}: {e}", i + 2))))
        .collect()
}

pub fn render_aggregate_csv(stats: &IndexMap<String, AccuracyStats>) -> String {
    table(
        ["cut_point", "runs", "mean", "std", "min", "max"],
        stats.iter().map(|(k, s)| {
            [k.clone(), s.runs.to_string(), s.mean.to_string(), s.std.to_string(), s.min.to_string(), s.max.to_string()]
        }),
    )
}

pub fn render_plot_csv(stats: &IndexMap<String, AccuracyStats>) -> String {
    table(
        ["cut_point", "mean", "std"],
        stats.iter().map(|(k, s)| [k.clone(), s.mean.to_string(), s.std.to_string()]),
    )
}

pub fn render_layers_csv(report: &SweepReport) -> String {
    table(
        [
            "cut_point",
            "node",
            "feature_length",
            "pool_side",
            "runs",
            "mean",
            "std",
            "min",
            "max",
            "params_learned",
            "params_running_stats",
            "param_ratio",
            "status",
        ],
        report.layers.iter().map(|l| {
            let s = l.stats.as_ref();
            [
                l.cut_point.clone(),
                l.node.clone(),
                opt(l.feature_length),
                opt(l.pool_side),
                opt(s.map(|s| s.runs)),
                opt(s.map(|s| s.mean)),
                opt(s.map(|s| s.std)),
                opt(s.map(|s| s.min)),
                opt(s.map(|s| s.max)),
                l.params.learned.to_string(),
                l.params.running_stats.to_string(),
                l.param_ratio.to_string(),
                match &l.error {
                    Some(e) => format!("failed: {e}"),
                    None => "ok".into(),
                },
            ]
        }),
    )
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, ExperimentError> {
    fs::write(&path, text).map_err(ExperimentError::io(&path))?;
    Ok(path)
}

/// Writes all report files into `dir`, creating it if needed.
pub fn emit_report(report: &SweepReport, dir: &Path) -> Result<ReportFiles, ExperimentError> {
    fs::create_dir_all(dir).map_err(ExperimentError::io(dir))?;
    let stats = aggregate_runs(&report.runs);
    Ok(ReportFiles {
        runs: write(dir.join("runs.csv"), &render_runs_csv(&report.runs))?,
        aggregate: write(dir.join("aggregate.csv"), &render_aggregate_csv(&stats))?,
        layers: write(dir.join("layers.csv"), &render_layers_csv(report))?,
        plot_data: write(dir.join("plot_data.csv"), &render_plot_csv(&stats))?,
        summary: write(
            dir.join("summary.json"),
            &(serde_json::to_string_pretty(report).expect("serializable") + "\n"),
        )?,
    })
}
