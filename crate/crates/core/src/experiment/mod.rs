//! Cut-point sweeps: extract (or reuse cached) features per cut-point, train
//! seeded probes, evaluate on the test split, and aggregate per layer.

mod config;
mod report;
mod stats;
mod sweep;

use std::path::PathBuf;

use thiserror::Error;

use crate::codec::FormatError;
use crate::dataset::DatasetError;
use crate::features::FeatureError;
use crate::graph::GraphError;
use crate::probe::ProbeError;

pub use config::{resolve_graph, DatasetSource, ExperimentConfig, SplitSource};
pub use report::{
    emit_report, parse_runs_csv, render_aggregate_csv, render_layers_csv, render_plot_csv, render_runs_csv, ReportFiles, REPORT_FILES,
};
pub use stats::{aggregate_runs, aggregate_stats, AccuracyStats};
pub use sweep::{
    extract_manifest_features, partition_features, run_sweep, ExtractionLog, LayerSummary, RunRow, RunTiming,
    SweepOutcome, SweepReport,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    /// Process exit code: 1 for configuration problems, 2 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            _ => 2,
        }
    }
}
