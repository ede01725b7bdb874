use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cutprobe::dataset::{
    greedy_split, load_manifest, read_split_file, split_by_subject, write_split_file, generate_synthetic,
    Normalization, SplitAssignment, SplitFractions, SyntheticConfig,
};
use cutprobe::experiment::{
    aggregate_runs, extract_manifest_features, parse_runs_csv, partition_features, render_aggregate_csv,
    render_plot_csv, resolve_graph, run_sweep, ExperimentConfig, ExperimentError,
};
use cutprobe::features::{FeatureBudget, FeatureSet, DEFAULT_BUDGET};
use cutprobe::graph::{count_params, load_weights, ModelGraph, WeightStore};
use cutprobe::probe::{evaluate, train_probe, TrainConfig};

/// Layer-probing toolkit: truncate a network at a cut-point, pool its
/// activations to a fixed budget and train linear probes on them.
#[derive(Parser)]
#[command(name = "cutprobe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full cut-point sweep from a TOML or JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Extract pooled features for every manifest image at one cut-point.
    Extract(ExtractArgs),
    /// Train one probe on a feature cache and report eval/test accuracy.
    TrainProbe(TrainArgs),
    /// Assign manifest subjects to train/eval/test.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_fractions, default_value = "0.83,0.07,0.10")]
        fractions: SplitFractions,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter counts, optionally for the graph truncated at a cut-point.
    CountParams {
        /// Graph JSON path or `bundled:<name>`.
        #[arg(long)]
        graph: String,
        #[arg(long)]
        cut: Option<String>,
    },
    /// Write the procedural texture dataset and its manifest.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 11)]
        subjects: usize,
        #[arg(long, default_value_t = 100)]
        images_per_subject: usize,
        /// Overrides --images-per-subject.
        #[arg(long)]
        total_images: Option<usize>,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute aggregate and plot tables from a runs table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a randomly initialized weight container for a graph.
    InitWeights {
        #[arg(long)]
        graph: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct WeightArgs {
    /// Graph JSON path or `bundled:<name>`.
    #[arg(long)]
    graph: String,
    #[arg(long, conflicts_with = "random_weights", required_unless_present = "random_weights")]
    weights: Option<PathBuf>,
    /// Use He/Glorot random weights drawn with this seed.
    #[arg(long)]
    random_weights: Option<u64>,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    model: WeightArgs,
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated class order; inferred from the manifest when absent.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    #[arg(long)]
    cut: String,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, conflicts_with = "split_seed")]
    split_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, value_parser = parse_fractions, default_value = "0.83,0.07,0.10")]
    fractions: SplitFractions,
    /// Number of classes; defaults to the largest label plus one.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    lr: f32,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    standardize: bool,
    /// Probe weight container; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_fractions(s: &str) -> Result<SplitFractions, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let arr: [f64; 3] = v.try_into().map_err(|_| "expected three comma-separated fractions".to_string())?;
    SplitFractions::new(arr).map_err(|e| e.to_string())
}

/// An error with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

fn config_error(message: impl Display) -> Failure {
    Failure {
        code: 1,
        message: message.to_string(),
    }
}

fn data_error(message: impl Display) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn load_model(args: &WeightArgs) -> Result<(ModelGraph, WeightStore), Failure> {
    let (graph, _) = resolve_graph(&args.graph)?;
    let weights = match (&args.weights, args.random_weights) {
        (Some(path), _) => {
            let bytes = fs::read(path).map_err(|e| data_error(format!("{}: {e}", path.display())))?;
            load_weights(&bytes, &graph).map_err(data_error)?
        }
        (None, Some(seed)) => WeightStore::random_for(&graph, seed),
        (None, None) => unreachable!("clap requires one"),
    };
    Ok((graph, weights))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| data_error(format!("{}: {e}", path.display())))
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Sweep { config } => {
            let config = ExperimentConfig::load(&config)?;
            let outcome = run_sweep(&config)?;
            for layer in &outcome.report.layers {
                match (&layer.stats, &layer.error) {
                    (Some(s), _) => println!(
                        "{:<8} mean {:.4}  std {:.4}  min {:.4}  max {:.4}  params {:.4}",
                        layer.cut_point, s.mean, s.std, s.min, s.max, layer.param_ratio
                    ),
                    (None, Some(e)) => println!("{:<8} FAILED: {e}", layer.cut_point),
                    (None, None) => println!("{:<8} no runs", layer.cut_point),
                }
            }
            println!(
                "report: {} (cache hits {}/{})",
                outcome.files.summary.parent().unwrap_or(Path::new(".")).display(),
                outcome.cache_hits(),
                outcome.extractions.len()
            );
            Ok(outcome.exit_code() as u8)
        }
        Command::Extract(args) => {
            let (graph, weights) = load_model(&args.model)?;
            if !graph.cut_points().contains_key(&args.cut) {
                return Err(config_error(format!(
                    "cut-point {:?} not in {} (available: {:?})",
                    args.cut,
                    graph.name(),
                    graph.cut_labels()
                )));
            }
            let budget = FeatureBudget::new(args.budget).map_err(config_error)?;
            let manifest = load_manifest(&args.manifest, args.classes.as_deref()).map_err(data_error)?;
            let set = extract_manifest_features(&graph, &weights, &args.cut, budget, &manifest, &Normalization::default())
                .map_err(data_error)?;
            set.write(&args.out).map_err(data_error)?;
            print_json(&json!({
                "model": set.model,
                "cut_point": set.cut_point,
                "vector_len": set.vector_len,
                "records": set.records.len(),
                "classes": manifest.class_names,
            }));
            Ok(0)
        }
        Command::TrainProbe(args) => train_command(args),
        Command::Split {
            manifest,
            seed,
            fractions,
            out,
        } => {
            let manifest = load_manifest(&manifest, None).map_err(data_error)?;
            let split = split_by_subject(&manifest, fractions, seed).map_err(data_error)?;
            write_split_file(&out, &split).map_err(data_error)?;
            print_json(&json!({
                "counts": split.counts(&manifest),
                "fractions": split.achieved_fractions(&manifest),
            }));
            Ok(0)
        }
        Command::CountParams { graph, cut } => {
            let (graph, _) = resolve_graph(&graph)?;
            let full = count_params(&graph);
            let mut out = json!({
                "model": graph.name(),
                "learned": full.learned,
                "running_stats": full.running_stats,
            });
            if let Some(label) = cut {
                let part = count_params(&graph.truncate_at(&label).map_err(config_error)?);
                out["cut_point"] = json!(label);
                out["truncated_learned"] = json!(part.learned);
                out["truncated_running_stats"] = json!(part.running_stats);
                out["ratio"] = json!(part.learned as f64 / full.learned.max(1) as f64);
            }
            print_json(&out);
            Ok(0)
        }
        Command::GenSynthetic {
            out,
            subjects,
            images_per_subject,
            total_images,
            size,
            classes,
            seed,
        } => {
            let config = SyntheticConfig {
                classes,
                subjects,
                images_per_subject,
                total_images,
                size,
                seed,
            };
            let manifest = generate_synthetic(&config, &out).map_err(|e| match e {
                cutprobe::dataset::DatasetError::Invalid(_) => config_error(e),
                e => data_error(e),
            })?;
            print_json(&json!({
                "images": manifest.records.len(),
                "subjects": manifest.subject_counts().len(),
                "manifest": out.join("manifest.csv"),
            }));
            Ok(0)
        }
        Command::Report { runs, out } => {
            let text = fs::read_to_string(&runs).map_err(|e| data_error(format!("{}: {e}", runs.display())))?;
            let rows = parse_runs_csv(&text).map_err(data_error)?;
            let stats = aggregate_runs(&rows);
            fs::create_dir_all(&out).map_err(|e| data_error(format!("{}: {e}", out.display())))?;
            write_file(&out.join("aggregate.csv"), render_aggregate_csv(&stats))?;
            write_file(&out.join("plot_data.csv"), render_plot_csv(&stats))?;
            print!("{}", render_aggregate_csv(&stats));
            Ok(0)
        }
        Command::InitWeights { graph, seed, out } => {
            let (graph, _) = resolve_graph(&graph)?;
            let store = WeightStore::random_for(&graph, seed);
            write_file(&out, store.to_bytes().map_err(data_error)?)?;
            print_json(&json!({ "model": graph.name(), "tensors": store.len() }));
            Ok(0)
        }
    }
}

fn train_command(args: TrainArgs) -> Result<u8, Failure> {
    let set = FeatureSet::read(&args.features).map_err(data_error)?;
    let split: SplitAssignment = match &args.split_file {
        Some(path) => read_split_file(path).map_err(data_error)?,
        None => {
            let mut counts = std::collections::BTreeMap::<String, usize>::new();
            for r in &set.records {
                *counts.entry(r.subject_id.clone()).or_default() += 1;
            }
            let counts: Vec<_> = counts.into_iter().collect();
            greedy_split(&counts, args.fractions, args.split_seed).map_err(data_error)?
        }
    };
    let [train, eval, test] = partition_features(&set, &split).map_err(data_error)?;
    let max_label = set.records.iter().map(|r| r.label as usize).max().unwrap_or(0);
    let classes = args.classes.unwrap_or((max_label + 1).max(2));
    let config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        seed: args.seed,
        momentum: args.momentum,
        standardize: args.standardize,
    };
    config.validate().map_err(config_error)?;
    let (model, trace) = train_probe(&train, &eval, classes, &config).map_err(data_error)?;
    let tested = evaluate(&model, &test).map_err(data_error)?;
    write_file(&args.out, model.to_store().to_bytes().map_err(data_error)?)?;
    let meta = json!({
        "model": set.model,
        "cut_point": set.cut_point,
        "feature_length": set.vector_len,
        "classes": classes,
        "train_config": config,
        "split_sizes": [train.len(), eval.len(), test.len()],
        "selected_epoch": trace.selected_epoch,
        "eval_accuracy": trace.selected().eval_accuracy,
        "test": tested,
        "trace": trace.epochs,
    });
    let mut meta_path = args.out.clone().into_os_string();
    meta_path.push(".meta.json");
    write_file(Path::new(&meta_path), serde_json::to_string_pretty(&meta).expect("serializable"))?;
    print_json(&json!({
        "selected_epoch": trace.selected_epoch,
        "eval_accuracy": trace.selected().eval_accuracy,
        "test_accuracy": tested.accuracy,
    }));
    Ok(0)
}
