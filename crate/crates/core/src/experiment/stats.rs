use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::RunRow;

/// Summary of per-run test accuracies for one cut-point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single run.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn aggregate_stats(values: &[f64]) -> Option<AccuracyStats> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(AccuracyStats {
        runs: n,
        mean,
        std,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Test-accuracy statistics per cut-point, in order of first appearance.
pub fn aggregate_runs(rows: &[RunRow]) -> IndexMap<String, AccuracyStats> {
    let mut groups: IndexMap<String, Vec<f64>> = IndexMap::new();
    for r in rows {
        groups.entry(r.cut_point.clone()).or_default().push(r.test_accuracy);
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, aggregate_stats(&v).expect("non-empty group")))
        .collect()
}
