use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{emit_report, ReportFiles};
use super::stats::{aggregate_stats, AccuracyStats};
use super::{resolve_graph, ExperimentConfig, ExperimentError};
use crate::dataset::{
    generate_synthetic, load_image_tensor, load_manifest, read_split_file, split_by_subject, write_split_file,
    DatasetManifest, ManifestRecord, Normalization, SplitAssignment, SyntheticConfig,
};
use crate::features::{cache_key, extract_features_with, FeatureBudget, FeatureError, FeatureExtractor, FeatureSet, LabeledImage};
use crate::graph::{count_params, load_weights, ModelGraph, ParamCount, WeightStore};
use crate::par::*;
use crate::probe::{evaluate, train_probe, LabeledFeatures, ProbeError, TrainConfig};

/// Images decoded per extraction batch.
const LOAD_CHUNK: usize = 256;

/// One trained probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub cut_point: String,
    pub seed: u64,
    pub eval_accuracy: f64,
    pub test_accuracy: f64,
    pub selected_epoch: usize,
    pub feature_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTiming {
    pub cut_point: String,
    pub seed: u64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionLog {
    pub cut_point: String,
    pub cache_file: PathBuf,
    pub cache_hit: bool,
    pub records: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSummary {
    pub cut_point: String,
    pub node: String,
    pub feature_length: Option<usize>,
    pub pool_side: Option<usize>,
    /// `None` when the cut-point failed.
    pub stats: Option<AccuracyStats>,
    /// Parameters of the graph truncated at this cut-point.
    pub params: ParamCount,
    /// Learned parameters retained relative to the full graph.
    pub param_ratio: f64,
    pub error: Option<String>,
}

/// Everything a sweep produces that is a pure function of its inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub model: String,
    pub budget: usize,
    pub runs_per_layer: usize,
    pub base_seed: u64,
    pub classes: Vec<String>,
    pub split_counts: [usize; 3],
    pub split_fractions: [f64; 3],
    pub full_params: ParamCount,
    pub layers: Vec<LayerSummary>,
    pub runs: Vec<RunRow>,
}

impl SweepReport {
    pub fn failed_layers(&self) -> impl Iterator<Item = &LayerSummary> {
        self.layers.iter().filter(|l| l.error.is_some())
    }
}

/// A finished sweep: the deterministic report plus timing and cache activity.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: SweepReport,
    pub timings: Vec<RunTiming>,
    pub extractions: Vec<ExtractionLog>,
    pub files: ReportFiles,
}

impl SweepOutcome {
    pub fn cache_hits(&self) -> usize {
        self.extractions.iter().filter(|e| e.cache_hit).count()
    }

    /// 0 when every cut-point succeeded, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.report.failed_layers().next().is_some() {
            3
        } else {
            0
        }
    }
}

/// Extracts one feature vector per manifest record at `cut_point`, in manifest order.
pub fn extract_manifest_features(
    graph: &ModelGraph,
    weights: &WeightStore,
    cut_point: &str,
    budget: FeatureBudget,
    manifest: &DatasetManifest,
    norm: &Normalization,
) -> Result<FeatureSet, FeatureError> {
    let extractor = FeatureExtractor::new(graph, weights, cut_point, budget)?;
    let input = graph.input_shape();
    let records = extract_features_with(&extractor, &manifest.records, LOAD_CHUNK, |r: &ManifestRecord| {
        let tensor = load_image_tensor(&r.resolved, input, norm).map_err(|e| FeatureError::Load {
            image_id: r.path.clone(),
            detail: e.to_string(),
        })?;
        Ok(LabeledImage {
            image_id: r.path.clone(),
            subject_id: r.subject_id.clone(),
            label: r.label,
            tensor,
        })
    })?;
    Ok(FeatureSet {
        model: graph.name().to_string(),
        cut_point: cut_point.to_string(),
        vector_len: extractor.feature_len(),
        records,
    })
}

/// Splits a feature set into train, eval and test matrices.
pub fn partition_features(set: &FeatureSet, split: &SplitAssignment) -> Result<[LabeledFeatures; 3], ExperimentError> {
    let mut parts: [Vec<_>; 3] = Default::default();
    for r in &set.records {
        let s = split
            .split_of(&r.subject_id)
            .ok_or_else(|| crate::dataset::DatasetError::UnassignedSubject(r.subject_id.clone()))?;
        parts[s.index()].push(r);
    }
    let [a, b, c] = parts.map(|p| LabeledFeatures::from_records(set.vector_len, p));
    Ok([a?, b?, c?])
}

fn load_dataset(config: &ExperimentConfig) -> Result<DatasetManifest, ExperimentError> {
    let classes = config.dataset.classes.as_deref();
    if let Some(path) = &config.dataset.manifest {
        return Ok(load_manifest(path, classes)?);
    }
    let synth = config.dataset.synthetic.as_ref().expect("validated");
    let dir = config.output_dir.join("synthetic");
    let marker = dir.join("config.json");
    let wanted = serde_json::to_string_pretty(synth).expect("serializable");
    let reuse = fs::read_to_string(&marker).is_ok_and(|s| s == wanted) && dir.join("manifest.csv").is_file();
    if reuse {
        let names = synthetic_classes(synth);
        return Ok(load_manifest(&dir.join("manifest.csv"), Some(classes.unwrap_or(&names)))?);
    }
    info!("generating synthetic dataset in {}", dir.display());
    let manifest = generate_synthetic(synth, &dir)?;
    fs::write(&marker, wanted).map_err(ExperimentError::io(&marker))?;
    Ok(manifest)
}

fn synthetic_classes(c: &SyntheticConfig) -> Vec<String> {
    crate::dataset::TISSUE_CLASSES[..c.classes.min(3)].iter().map(|s| s.to_string()).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the manifest together with the bytes of every image it names.
fn dataset_digest(manifest: &DatasetManifest) -> Result<String, ExperimentError> {
    let digests: Result<Vec<String>, ExperimentError> = manifest
        .records
        .par_iter()
        .map(|r| {
            let bytes = fs::read(&r.resolved).map_err(ExperimentError::io(&r.resolved))?;
            Ok(sha256_hex(&bytes))
        })
        .collect();
    let mut h = Sha256::new();
    h.update(manifest.to_csv());
    for d in digests? {
        h.update(d);
    }
    Ok(hex::encode(h.finalize()))
}

struct Prepared {
    graph: ModelGraph,
    graph_json: String,
    weights: WeightStore,
    weights_id: String,
    manifest: DatasetManifest,
    split: SplitAssignment,
    cut_points: Vec<String>,
    budget: FeatureBudget,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    config.validate()?;
    let (graph, graph_json) = resolve_graph(&config.graph)?;
    let cut_points = if config.cut_points.is_empty() {
        graph.cut_labels()
    } else {
        for label in &config.cut_points {
            if !graph.cut_points().contains_key(label) {
                return Err(ExperimentError::Config(format!(
                    "cut-point {label:?} is not registered in {} (available: {:?})",
                    graph.name(),
                    graph.cut_labels()
                )));
            }
        }
        config.cut_points.clone()
    };
    let budget = FeatureBudget::new(config.budget).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let (weights, weights_id) = match (&config.weights, config.random_weights_seed) {
        (Some(path), _) => {
            let bytes = fs::read(path).map_err(ExperimentError::io(path))?;
            (load_weights(&bytes, &graph)?, sha256_hex(&bytes))
        }
        (None, Some(seed)) => (WeightStore::random_for(&graph, seed), format!("random:{seed}")),
        (None, None) => unreachable!("validated"),
    };
    let manifest = load_dataset(config)?;
    let split = match &config.split.file {
        Some(path) => read_split_file(path)?,
        None => split_by_subject(&manifest, config.split.fractions, config.split.seed)?,
    };
    split.check_covers(&manifest)?;
    Ok(Prepared {
        graph,
        graph_json,
        weights,
        weights_id,
        manifest,
        split,
        cut_points,
        budget,
    })
}

/// Runs the full sweep described by `config` and writes its report.
///
/// Errors before the first cut-point (config, graph, weights, dataset, split)
/// abort the sweep. Errors inside a cut-point are recorded on its summary
/// row and the sweep moves on.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutcome, ExperimentError> {
    let p = prepare(config)?;
    let out = &config.output_dir;
    let cache_dir = out.join("cache");
    fs::create_dir_all(&cache_dir).map_err(ExperimentError::io(&cache_dir))?;
    write_split_file(&out.join("split.csv"), &p.split)?;

    let dataset_id = dataset_digest(&p.manifest)?;
    let norm_id = serde_json::to_string(&config.preprocess).expect("serializable");
    let full_params = count_params(&p.graph);
    let classes = p.manifest.class_names.len();

    let mut layers = Vec::new();
    let mut runs = Vec::new();
    let mut timings = Vec::new();
    let mut extractions = Vec::new();
    for label in &p.cut_points {
        let truncated = p.graph.truncate_at(label)?;
        let params = count_params(&truncated);
        let mut summary = LayerSummary {
            cut_point: label.clone(),
            node: p.graph.cut_points()[label].clone(),
            feature_length: None,
            pool_side: None,
            stats: None,
            params,
            param_ratio: params.learned as f64 / full_params.learned.max(1) as f64,
            error: None,
        };
        let key = cache_key([
            p.graph_json.as_bytes(),
            p.weights_id.as_bytes(),
            label.as_bytes(),
            config.budget.to_string().as_bytes(),
            norm_id.as_bytes(),
            dataset_id.as_bytes(),
        ]);
        let cache_file = cache_dir.join(format!("{}-{}.cpfc", sanitize(label), &key[..16]));
        match run_layer(config, &p, label, &cache_file, classes) {
            Ok(done) => {
                summary.feature_length = Some(done.feature_length);
                summary.pool_side = done.pool_side;
                let acc: Vec<f64> = done.runs.iter().map(|r| r.test_accuracy).collect();
                summary.stats = aggregate_stats(&acc);
                extractions.push(done.extraction);
                timings.extend(done.timings);
                runs.extend(done.runs);
            }
            Err(e) => {
                warn!("cut-point {label} failed: {e}");
                summary.error = Some(e.to_string());
            }
        }
        layers.push(summary);
    }

    let report = SweepReport {
        model: p.graph.name().to_string(),
        budget: config.budget,
        runs_per_layer: config.runs_per_layer,
        base_seed: config.base_seed,
        classes: p.manifest.class_names.clone(),
        split_counts: p.split.counts(&p.manifest),
        split_fractions: p.split.achieved_fractions(&p.manifest),
        full_params,
        layers,
        runs,
    };
    let files = emit_report(&report, &out.join("report"))?;
    let log = serde_json::json!({ "extractions": extractions, "runs": timings });
    let log_path = out.join("report").join("timings.json");
    fs::write(&log_path, serde_json::to_string_pretty(&log).expect("serializable"))
        .map_err(ExperimentError::io(&log_path))?;
    Ok(SweepOutcome {
        report,
        timings,
        extractions,
        files,
    })
}

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' }).collect()
}

struct LayerRuns {
    feature_length: usize,
    pool_side: Option<usize>,
    extraction: ExtractionLog,
    runs: Vec<RunRow>,
    timings: Vec<RunTiming>,
}

fn cached_set(path: &Path, model: &str, label: &str, records: usize) -> Option<FeatureSet> {
    if !path.is_file() {
        return None;
    }
    match FeatureSet::read(path) {
        Ok(set) if set.model == model && set.cut_point == label && set.records.len() == records => Some(set),
        Ok(_) => {
            warn!("{}: cache header does not match; recomputing", path.display());
            None
        }
        Err(e) => {
            warn!("{}: unreadable cache ({e}); recomputing", path.display());
            None
        }
    }
}

fn run_layer(
    config: &ExperimentConfig,
    p: &Prepared,
    label: &str,
    cache_file: &Path,
    classes: usize,
) -> Result<LayerRuns, ExperimentError> {
    let start = Instant::now();
    let extractor = FeatureExtractor::new(&p.graph, &p.weights, label, p.budget)?;
    let pool_side = extractor.pool_side();
    drop(extractor);
    let (set, cache_hit) = match cached_set(cache_file, p.graph.name(), label, p.manifest.records.len()) {
        Some(set) => (set, true),
        None => {
            info!("extracting {label} for {} images", p.manifest.records.len());
            let set = extract_manifest_features(&p.graph, &p.weights, label, p.budget, &p.manifest, &config.preprocess)?;
            set.write(cache_file)?;
            (set, false)
        }
    };
    let extraction = ExtractionLog {
        cut_point: label.to_string(),
        cache_file: cache_file.to_path_buf(),
        cache_hit,
        records: set.records.len(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    let [train, eval, test] = partition_features(&set, &p.split)?;
    let feature_length = set.vector_len;
    drop(set);

    let results: Result<Vec<(RunRow, RunTiming)>, ProbeError> = (0..config.runs_per_layer as u64)
        .into_par_iter()
        .map(|i| {
            let seed = config.base_seed.wrapping_add(i);
            let started = Instant::now();
            let train_config = TrainConfig {
                seed,
                ..config.train.clone()
            };
            let (model, trace) = train_probe(&train, &eval, classes, &train_config)?;
            let tested = evaluate(&model, &test)?;
            let row = RunRow {
                cut_point: label.to_string(),
                seed,
                eval_accuracy: trace.selected().eval_accuracy,
                test_accuracy: tested.accuracy,
                selected_epoch: trace.selected_epoch,
                feature_length,
            };
            let timing = RunTiming {
                cut_point: label.to_string(),
                seed,
                wall_time: started.elapsed().as_secs_f64(),
            };
            Ok((row, timing))
        })
        .collect();
    let (runs, timings) = results?.into_iter().unzip();
    Ok(LayerRuns {
        feature_length,
        pool_side,
        extraction,
        runs,
        timings,
    })
}

