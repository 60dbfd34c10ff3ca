//! Command-line interface.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::ablation::run_ablation;
use crate::analysis::{
    degree_distribution, jaccard_delta, nonzero_jaccard_rate, DegreeHistogram, RelationClassReport,
};
use crate::config::{Ablation, TrainConfig};
use crate::data::{
    dataset_hash, generate_snapshots, label_activity, load_dataset, write_atomic, write_dataset,
    write_id_map, ActivityPolicy, DatasetPaths, IdMap, InteractionGraph, LoadedDataset,
    SynthConfig,
};
use crate::error::{LsirError, Result};
use crate::evaluation::{evaluate, DEFAULT_NEGATIVES};
use crate::model::embed;
use crate::training::{train, PreparedData, TrainedModel};

pub const SECOND_SNAPSHOT_FILE: &str = "interactions_t2.tsv";
pub const NEW_EDGES_FILE: &str = "new_edges.tsv";
pub const DEFAULT_DEGREE_BOUNDS: [usize; 4] = [5, 10, 20, 40];

#[derive(Debug, Parser)]
#[command(name = "lsir", version, about = "Social recommendation for inactive users")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a second snapshot.
    Synth(SynthArgs),
    /// Describe how social links relate to shared interests.
    Analyze(AnalyzeArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Compute cohort metrics for a checkpoint.
    Evaluate(EvaluateArgs),
    /// Write the refined social graph of a checkpoint as TSV.
    ExportGraph(ExportArgs),
    /// Train and evaluate model variants over several seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON generator settings; unspecified fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generate the larger dataset used for ablations.
    #[arg(long)]
    pub large: bool,
    #[arg(long, default_value_t = 300)]
    pub new_edges: usize,
    #[arg(long, default_value_t = 2)]
    pub growth: usize,
    #[arg(long, default_value_t = 0.6)]
    pub active_adoption: f64,
    #[arg(long, default_value_t = 0.2)]
    pub inactive_adoption: f64,
}

#[derive(Debug, Args)]
pub struct ActivityArgs {
    /// Users with fewer interactions are inactive.
    #[arg(long, conflicts_with = "inactive_percentile")]
    pub inactive_threshold: Option<usize>,
    /// Fraction of users with the fewest interactions that is inactive.
    #[arg(long)]
    pub inactive_percentile: Option<f64>,
}

impl ActivityArgs {
    fn policy(&self) -> ActivityPolicy {
        match (self.inactive_threshold, self.inactive_percentile) {
            (Some(t), _) => ActivityPolicy::Threshold(t),
            (None, Some(p)) => ActivityPolicy::Percentile(p),
            (None, None) => ActivityPolicy::Percentile(0.3),
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub activity: ActivityArgs,
    /// Upper bounds of the social degree buckets.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_DEGREE_BOUNDS)]
    pub degree_bounds: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20])]
    pub k: Vec<usize>,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NEGATIVES)]
    pub negatives: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
    pub seeds: Vec<u64>,
    /// Variants to run; all by default.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20])]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_NEGATIVES)]
    pub negatives: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance written next to every output as `<output>.manifest.json`, so
/// the output itself stays byte-identical across reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub data_hash: Option<String>,
    pub config_hash: Option<String>,
    pub unix_time: u64,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn write_manifest(
    output: &Path,
    command: &str,
    seed: Option<u64>,
    data_hash: Option<String>,
    config_hash: Option<String>,
) -> Result<()> {
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        args: std::env::args().skip(1).collect(),
        seed,
        data_hash,
        config_hash,
        unix_time: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    write_atomic(&manifest_path(output), &serde_json::to_vec_pretty(&manifest)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| LsirError::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_json(&read_to_string(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn load_dir(dir: &Path) -> Result<(LoadedDataset, String)> {
    let paths = DatasetPaths::in_dir(dir);
    let data = load_dataset(&paths)?;
    let s = data.stats;
    if s.duplicate_interactions + s.duplicate_social_edges + s.self_loops > 0 {
        log::warn!(
            "dropped {} duplicate interactions, {} duplicate social edges, {} self-loops",
            s.duplicate_interactions,
            s.duplicate_social_edges,
            s.self_loops
        );
    }
    Ok((data, dataset_hash(&paths)?))
}

fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => serde_json::from_str(&read_to_string(p)?)
            .map_err(|e| LsirError::Config(format!("bad generator config: {e}")))?,
        None if args.large => SynthConfig::ablation_default(),
        None => SynthConfig::default(),
    };
    let pair = generate_snapshots(
        &cfg,
        args.new_edges,
        args.growth,
        args.active_adoption,
        args.inactive_adoption,
        args.seed,
    )?;
    let first = &pair.first;
    let ids = IdMap::identity(first.graph.num_users(), first.graph.num_items());
    write_dataset(&args.out, &first.graph, &first.social, &ids)?;
    write_id_map(&args.out.join(crate::data::ID_MAP_FILE), &ids)?;
    let mut t2 = String::new();
    for (u, i) in pair.second.pairs() {
        let _ = writeln!(t2, "{u}\t{i}");
    }
    write_atomic(&args.out.join(SECOND_SNAPSHOT_FILE), t2.as_bytes())?;
    let mut edges = String::new();
    for (u, v) in &pair.new_edges {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    write_atomic(&args.out.join(NEW_EDGES_FILE), edges.as_bytes())?;
    let interactions = args.out.join(crate::data::INTERACTIONS_FILE);
    write_manifest(&interactions, "synth", Some(args.seed), None, None)?;
    println!(
        "wrote {} users, {} items, {} interactions, {} social edges to {}",
        first.graph.num_users(),
        first.graph.num_items(),
        first.graph.num_interactions(),
        first.social.num_edges(),
        args.out.display()
    );
    Ok(())
}

fn read_pairs(path: &Path, left: &HashMap<&str, usize>, right: &HashMap<&str, usize>) -> Result<Vec<(usize, usize)>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(LsirError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: "expected two tab-separated fields".into(),
            });
        };
        let lookup = |map: &HashMap<&str, usize>, id: &str| {
            map.get(id).copied().ok_or_else(|| LsirError::Reference {
                path: path.to_path_buf(),
                line: n + 1,
                id: id.to_string(),
            })
        };
        out.push((lookup(left, a)?, lookup(right, b)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub users: usize,
    pub items: usize,
    pub social_edges: usize,
    pub inactive_users: usize,
    pub nonzero_jaccard: RelationClassReport,
    pub degree_distribution: DegreeHistogram,
    /// Present when the directory holds a second snapshot.
    pub jaccard_delta: Option<RelationClassReport>,
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let (data, hash) = load_dir(&args.data)?;
    let labels = label_activity(&data.graph, args.activity.policy())?;
    let t2_path = args.data.join(SECOND_SNAPSHOT_FILE);
    let edges_path = args.data.join(NEW_EDGES_FILE);
    let delta = if t2_path.exists() && edges_path.exists() {
        let users: HashMap<&str, usize> =
            data.id_map.users.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
        let items: HashMap<&str, usize> =
            data.id_map.items.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
        let second_pairs = read_pairs(&t2_path, &users, &items)?;
        let new_edges = read_pairs(&edges_path, &users, &users)?;
        let second = InteractionGraph::with_pairs(&data.graph, second_pairs)?;
        Some(jaccard_delta(&new_edges, &data.social, &data.graph, &second, &labels, args.seed)?)
    } else {
        None
    };
    let report = AnalysisReport {
        users: data.graph.num_users(),
        items: data.graph.num_items(),
        social_edges: data.social.num_edges(),
        inactive_users: labels.inactive_users().len(),
        nonzero_jaccard: nonzero_jaccard_rate(&data.social, &data.graph, &labels, args.seed),
        degree_distribution: degree_distribution(&data.social, &labels, &args.degree_bounds)?,
        jaccard_delta: delta,
    };
    write_json(&args.out, &report)?;
    write_manifest(&args.out, "analyze", Some(args.seed), Some(hash), None)?;
    let r = &report.nonzero_jaccard;
    println!(
        "non-zero Jaccard: inac-inac {:.3}, inac-ac {:.3}, ac-ac {:.3}, random {:.3}",
        r.inac_inac.value, r.inac_ac.value, r.ac_ac.value, r.rand.value
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (data, hash) = load_dir(&args.data)?;
    let prepared = PreparedData::new(&data.graph, data.social, &cfg)?;
    match train(&cfg, &prepared) {
        Ok(model) => {
            model.save(&args.out)?;
            write_manifest(&args.out, "train", Some(cfg.seed), Some(hash), Some(cfg.hash()))?;
            if let Some(last) = model.loss_curve.last() {
                println!("trained {} epochs, final loss {:.4}", model.epochs_completed(), last.total);
            }
            Ok(())
        }
        Err(abort) => {
            if let Some(last) = &abort.last_good {
                last.save(&args.out)?;
                log::warn!(
                    "kept the checkpoint after epoch {} at {}",
                    last.epochs_completed(),
                    args.out.display()
                );
            }
            Err(abort.error)
        }
    }
}

fn load_model_and_data(checkpoint: &Path, dir: &Path) -> Result<(TrainedModel, PreparedData, LoadedDataset, String)> {
    let model = TrainedModel::load(checkpoint)?;
    let (data, hash) = load_dir(dir)?;
    let prepared = PreparedData::new(&data.graph, data.social.clone(), &model.config)?;
    model.check_data(&prepared)?;
    Ok((model, prepared, data, hash))
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let (model, prepared, _, hash) = load_model_and_data(&args.checkpoint, &args.data)?;
    let eval = evaluate(&model, &prepared, &args.k, args.negatives, args.seed)?;
    write_json(&args.report, &eval.report)?;
    write_manifest(&args.report, "evaluate", Some(args.seed), Some(hash), Some(model.config_hash.clone()))?;
    for (name, c) in [
        ("inactive", &eval.report.inactive),
        ("active", &eval.report.active),
        ("overall", &eval.report.overall),
    ] {
        let parts: Vec<String> = c.metrics.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
        println!("{name} ({} users): {}", c.users, parts.join(", "));
    }
    Ok(())
}

fn export_graph(args: &ExportArgs) -> Result<()> {
    let (model, prepared, data, hash) = load_model_and_data(&args.checkpoint, &args.data)?;
    let md = model.model_data(&prepared)?;
    let emb = embed(&model.config, &model.params, &md)?;
    let last = emb.topology.last().expect("at least one refinement iteration");
    let ids = &data.id_map.users;
    let mut out = String::from("user\ttarget\tweight\tkind\n");
    for u in 0..last.neighbors.len() {
        for &(v, w) in &last.neighbors[u] {
            let _ = writeln!(out, "{}\t{}\t{w}\tU", ids[u], ids[v]);
        }
        for &(k, w) in &last.anchors[u] {
            let _ = writeln!(out, "{}\t{}\t{w}\tC", ids[u], ids[model.clusters.anchors[k]]);
        }
    }
    write_atomic(&args.out, out.as_bytes())?;
    write_manifest(&args.out, "export-graph", Some(model.config.seed), Some(hash), Some(model.config_hash.clone()))
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let base = load_config(args.config.as_deref())?;
    let variants: Vec<Ablation> = if args.variants.is_empty() {
        Ablation::ALL.to_vec()
    } else {
        args.variants.iter().map(|v| v.parse()).collect::<Result<_>>()?
    };
    let (data, hash) = load_dir(&args.data)?;
    let report = run_ablation(
        &data.graph,
        &data.social,
        &base,
        &variants,
        &args.seeds,
        &args.k,
        args.negatives,
        base.seed,
    )?;
    write_json(&args.out, &report)?;
    write_manifest(&args.out, "ablate", Some(base.seed), Some(hash), Some(base.hash()))?;
    for s in &report.variants {
        let parts: Vec<String> = args
            .k
            .iter()
            .map(|k| {
                let key = format!("ndcg@{k}");
                match (s.mean.get(&key), s.std.get(&key)) {
                    (Some(m), Some(sd)) => format!("{key} {m:.4} ± {sd:.4}"),
                    _ => format!("{key} n/a"),
                }
            })
            .collect();
        let note = if s.failed > 0 {
            format!(" ({} of {} runs failed)", s.failed, s.runs.len())
        } else {
            String::new()
        };
        println!("{:<9} inactive {}{note}", s.variant.name(), parts.join(", "));
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Analyze(a) => analyze(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::ExportGraph(a) => export_graph(a),
        Command::Ablate(a) => ablate(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 1 for usage and configuration errors, 2 for data and I/O
/// errors, 3 when training breaks down numerically.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
