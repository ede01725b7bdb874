use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::dataset::{Normalization, SplitFractions, SyntheticConfig};
use crate::features::DEFAULT_BUDGET;
use crate::graph::{load_graph, zoo, ModelGraph};
use crate::probe::TrainConfig;

/// One sweep, read from TOML (or JSON when the file ends in `.json`).
///
/// Relative paths resolve against the directory holding the config file.
/// `train.seed` is ignored: run `i` trains with seed `base_seed + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Graph JSON path, or `bundled:<name>`.
    pub graph: String,
    /// CPWT weight container. Mutually exclusive with `random_weights_seed`.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub random_weights_seed: Option<u64>,
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitSource,
    /// Empty means every registered cut-point, in graph order.
    #[serde(default)]
    pub cut_points: Vec<String>,
    #[serde(default = "default_runs")]
    pub runs_per_layer: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub preprocess: Normalization,
}

fn default_runs() -> usize {
    10
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

/// Exactly one of `manifest` or `synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Generated under `<output_dir>/synthetic` when set.
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    /// Declared class order; inferred (sorted) from the manifest when absent.
    #[serde(default)]
    pub classes: Option<Vec<String>>,
}

/// Either a seeded greedy split or an explicit subject-to-split file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct SplitSource {
    pub seed: u64,
    pub file: Option<PathBuf>,
    pub fractions: SplitFractions,
}


impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let mut config = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Rebases every relative path onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if !self.graph.starts_with("bundled:") && Path::new(&self.graph).is_relative() {
            self.graph = base.join(&self.graph).to_string_lossy().into_owned();
        }
        if let Some(p) = self.weights.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
        if let Some(p) = self.dataset.manifest.as_mut() {
            fix(p);
        }
        if let Some(p) = self.split.file.as_mut() {
            fix(p);
        }
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.runs_per_layer == 0 {
            return bad("runs_per_layer must be at least 1");
        }
        if self.budget == 0 {
            return bad("budget must be positive");
        }
        match (&self.weights, self.random_weights_seed) {
            (Some(_), Some(_)) => return bad("set only one of weights and random_weights_seed"),
            (None, None) => return bad("one of weights or random_weights_seed is required"),
            _ => {}
        }
        match (&self.dataset.manifest, &self.dataset.synthetic) {
            (Some(_), Some(_)) => return bad("dataset: set only one of manifest and synthetic"),
            (None, None) => return bad("dataset: one of manifest or synthetic is required"),
            _ => {}
        }
        self.train.validate().map_err(|e| ExperimentError::Config(e.to_string()))
    }
}

/// Loads a graph from a JSON path or a `bundled:<name>` reference.
pub fn resolve_graph(spec: &str) -> Result<(ModelGraph, String), ExperimentError> {
    if let Some(name) = spec.strip_prefix("bundled:") {
        let json = zoo::bundled(name).ok_or_else(|| {
            ExperimentError::Config(format!("unknown bundled graph {name:?} (available: {:?})", zoo::BUNDLED))
        })?;
        return Ok((load_graph(json.as_bytes())?, json.to_string()));
    }
    let bytes = fs::read(spec).map_err(ExperimentError::io(spec))?;
    let graph = load_graph(&bytes)?;
    Ok((graph, String::from_utf8_lossy(&bytes).into_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        graph = "bundled:probe_small"
        random_weights_seed = 1
        output_dir = "out"
        [dataset]
        manifest = "data/manifest.csv"
    "#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.runs_per_layer, 10);
        assert_eq!(c.budget, 8000);
        assert_eq!(c.train, TrainConfig::default());
        assert!(c.cut_points.is_empty());
        c.validate().unwrap();
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.resolve_paths(Path::new("/exp"));
        assert_eq!(c.output_dir, Path::new("/exp/out"));
        assert_eq!(c.dataset.manifest.unwrap(), Path::new("/exp/data/manifest.csv"));
        assert_eq!(c.graph, "bundled:probe_small");
    }

    #[test]
    fn zero_runs_rejected() {
        let text = format!("runs_per_layer = 0\n{MINIMAL}");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert!(matches!(c.validate(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("epochs = 3\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn json_mirrors_toml() {
        let t = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let j = ExperimentConfig::from_json(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(t, j);
    }
}
