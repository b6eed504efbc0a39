use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use transkt_core::data::{
    self, preprocess, Course, Dataset, DatasetSplit, InteractionLog, InteractionRecord,
    PreprocessOptions, SplitManifest,
};
use transkt_core::graph::{
    build_graph, candidate_pairs, CandidateMode, ConceptGraph, GraphBuildOptions, RelationBackend,
};
use transkt_core::llm::{CachedLlm, FixtureLlm, HttpLlmClient, LlmClient, API_KEY_ENV};
use transkt_core::negatives::{hybrid_sample_steps, DifficultyTable, NegativeConfig, SampleStats};
use transkt_core::numcore::Checkpoint;
use transkt_core::rng::{self, tag};
use transkt_core::semantics::{
    encode_nodes, load_node_texts, load_precomputed_embeddings, node_texts_to_string,
    summarize_all, FeatureMatrix, HashEncoder, NodeText, DEFAULT_DIM,
};
use transkt_core::synth::{self, SynthConfig};
use transkt_core::trainer::{self, ablation_table, run_ablation_suite, TrainConfig, TrainData};

use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "transkt", version, about = "Cross-course knowledge tracing pipeline")]
pub struct Cli {
    /// Overrides the seed of the stage (config seed, split seed, sampler seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded numerics and no wall-clock fields in reports.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Directory for cached LLM replies.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter an interaction log and write the encoded dataset and a split.
    Ingest(IngestArgs),
    /// Build the question/concept graph.
    BuildGraph(BuildGraphArgs),
    /// Summarize node texts with an LLM backend.
    Summarize(SummarizeArgs),
    /// Encode node texts into a feature matrix.
    Embed(EmbedArgs),
    /// Train a model from a config file.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Train and test every ablation variant.
    Ablate(ConfigArgs),
    /// Write hard negative sequences in the interaction-log format.
    SampleNegatives(SampleNegativesArgs),
    /// Generate a synthetic cross-course dataset with ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    concepts: PathBuf,
    /// Output directory for dataset.json and split.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    min_answers: usize,
    #[arg(long, default_value_t = 3)]
    min_per_course: usize,
    #[arg(long, default_value_t = 10)]
    min_cross_course: usize,
    /// Repeat the filters until nothing changes.
    #[arg(long)]
    fixpoint: bool,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GraphBackendKind {
    LlmHttp,
    Fixture,
    Heuristic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Candidates {
    Default,
    Full,
}

#[derive(Debug, Args)]
struct LlmArgs {
    /// Fixture file for the fixture backend.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Chat-completions URL for llm_http; the key is read from the environment.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "gpt-3.5-turbo")]
    model: String,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    backend: GraphBackendKind,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    llm: LlmArgs,
    #[arg(long, default_value_t = 5)]
    votes: u32,
    /// Cosine threshold of the heuristic backend.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = Candidates::Default)]
    candidates: Candidates,
    /// Query each pair in one order only.
    #[arg(long)]
    one_order: bool,
    #[arg(long, default_value = "X")]
    course_x: String,
    #[arg(long, default_value = "Y")]
    course_y: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SummaryBackendKind {
    LlmHttp,
    Fixture,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Node-text file.
    #[arg(long)]
    nodes: PathBuf,
    #[arg(long, value_enum)]
    backend: SummaryBackendKind,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EncoderKind {
    Hash,
    Precomputed,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    nodes: PathBuf,
    #[arg(long, value_enum)]
    backend: EncoderKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    /// Embedding file for the precomputed backend.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    split: SplitName,
    /// Config to read data paths from; defaults to the one stored in the
    /// checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the fusion weight.
    #[arg(long)]
    eta: Option<f64>,
    /// Report path; defaults to `eval_<split>.json` next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleNegativesArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Difficulties come from the training learners of this split; from all
    /// learners when absent.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    theta1: f64,
    #[arg(long, default_value_t = 0.6)]
    theta2: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

struct Globals {
    seed: Option<u64>,
    deterministic: bool,
    cache_dir: Option<PathBuf>,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let g = Globals {
        seed: cli.seed,
        deterministic: cli.deterministic,
        cache_dir: cli.cache_dir,
    };
    match cli.command {
        Command::Ingest(a) => ingest(&g, a),
        Command::BuildGraph(a) => build_graph_cmd(&g, a),
        Command::Summarize(a) => summarize(&g, a),
        Command::Embed(a) => embed(&g, a),
        Command::Train(a) => train(&g, a),
        Command::Evaluate(a) => evaluate(&g, a),
        Command::Ablate(a) => ablate(&g, a),
        Command::SampleNegatives(a) => sample_negatives(&g, a),
        Command::Synth(a) => synth_cmd(&g, a),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn ingest(g: &Globals, a: IngestArgs) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    let log = data::load_interactions(&a.interactions)?;
    let concepts = data::load_concept_map(&a.concepts)?;
    let opts = PreprocessOptions {
        min_answers_per_question: a.min_answers,
        min_per_course: a.min_per_course,
        min_cross_course: a.min_cross_course,
        fixpoint: a.fixpoint,
    };
    let dataset = preprocess(&log, &concepts, &opts)?;
    let split = data::split(&dataset, a.train_frac, a.val_frac, seed)?;
    log::info!(
        "{} of {} interactions kept; {} learners, {} questions, {} concepts",
        dataset.num_interactions(),
        log.len(),
        dataset.learners.len(),
        dataset.num_questions(),
        dataset.num_concepts()
    );

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let dataset_path = a.out.join("dataset.json");
    let split_path = a.out.join("split.json");
    write(&dataset_path, &dataset.to_json())?;
    write(&split_path, &split.manifest.to_json())?;

    let mut m = RunManifest::new("ingest", Some(seed), g.deterministic);
    m.config = json!({
        "min_answers_per_question": a.min_answers,
        "min_per_course": a.min_per_course,
        "min_cross_course": a.min_cross_course,
        "fixpoint": a.fixpoint,
        "train_frac": a.train_frac,
        "val_frac": a.val_frac,
    });
    m.input(&a.interactions)?;
    m.input(&a.concepts)?;
    m.output(&dataset_path)?;
    m.output(&split_path)?;
    m.write(&a.out)?;
    Ok(())
}

/// The LLM client selected by the flags, before caching.
fn llm_client(fixture: bool, llm: &LlmArgs) -> Result<Box<dyn LlmClient>> {
    if fixture {
        let path = llm
            .fixture
            .as_ref()
            .ok_or_else(|| transkt_core::Error::Config("the fixture backend needs --fixture".into()))?;
        Ok(Box::new(FixtureLlm::load(path)?))
    } else {
        let endpoint = llm
            .endpoint
            .clone()
            .ok_or_else(|| transkt_core::Error::Config("the llm_http backend needs --endpoint".into()))?;
        Ok(Box::new(HttpLlmClient::from_env(endpoint, llm.model.clone())?))
    }
}

fn build_graph_cmd(g: &Globals, a: BuildGraphArgs) -> Result<()> {
    let dataset = Dataset::load(&a.dataset)?;
    let mode = match a.candidates {
        Candidates::Default => CandidateMode::Default,
        Candidates::Full => CandidateMode::Full,
    };
    let candidates = candidate_pairs(&dataset, mode, !a.one_order);
    let options = GraphBuildOptions {
        course_names: [a.course_x.clone(), a.course_y.clone()],
        concept_names: None,
        parallelism: if g.deterministic { 1 } else { a.llm.parallelism.max(1) },
    };
    let mut m = RunManifest::new("build-graph", g.seed, g.deterministic);
    m.input(&a.dataset)?;
    let graph = match a.backend {
        GraphBackendKind::Heuristic => {
            let encoder = HashEncoder::new(DEFAULT_DIM, g.seed.unwrap_or(0))?;
            let backend = RelationBackend::Heuristic {
                encoder,
                threshold: a.threshold,
            };
            build_graph(&dataset, &backend, &candidates, &options)?
        }
        kind @ (GraphBackendKind::Fixture | GraphBackendKind::LlmHttp) => {
            let fixture = matches!(kind, GraphBackendKind::Fixture);
            if let (true, Some(p)) = (fixture, &a.llm.fixture) {
                m.input(p)?;
            }
            let client = llm_client(fixture, &a.llm)?;
            let cached = CachedLlm::new(client.as_ref(), g.cache_dir.clone());
            let backend = RelationBackend::Llm {
                client: &cached,
                votes: a.votes,
            };
            let mut graph = build_graph(&dataset, &backend, &candidates, &options)?;
            graph.provenance.cache_digest = Some(cached.digest());
            log::info!("{} backend calls past the cache", cached.inner_calls());
            graph
        }
    };
    log::info!(
        "{} candidate pairs, {} concept-concept edges",
        candidates.len(),
        graph.cc_edges.len()
    );
    write(&a.out, &graph.to_json())?;
    m.config = json!({
        "backend": format!("{:?}", a.backend).to_lowercase(),
        "votes": a.votes,
        "threshold": a.threshold,
        "candidates": format!("{:?}", a.candidates).to_lowercase(),
        "both_orders": !a.one_order,
        "model": a.llm.model,
        "endpoint": a.llm.endpoint,
        "api_key_env": API_KEY_ENV,
    });
    m.output(&a.out)?;
    m.write(&a.out)?;
    Ok(())
}

fn summarize(g: &Globals, a: SummarizeArgs) -> Result<()> {
    let nodes = load_node_texts(&a.nodes)?;
    let fixture = matches!(a.backend, SummaryBackendKind::Fixture);
    let client = llm_client(fixture, &a.llm)?;
    let cached = CachedLlm::new(client.as_ref(), g.cache_dir.clone());
    let parallelism = if g.deterministic { 1 } else { a.llm.parallelism.max(1) };
    let summarized = summarize_all(&cached, &nodes, parallelism)?;
    log::info!(
        "summarized {} nodes with {} backend calls",
        summarized.len(),
        cached.inner_calls()
    );
    write(&a.out, &node_texts_to_string(&summarized))?;

    let mut m = RunManifest::new("summarize", g.seed, g.deterministic);
    m.config = json!({
        "backend": format!("{:?}", a.backend).to_lowercase(),
        "model": a.llm.model,
        "endpoint": a.llm.endpoint,
        "cache_digest": cached.digest(),
    });
    m.input(&a.nodes)?;
    if let (true, Some(p)) = (fixture, &a.llm.fixture) {
        m.input(p)?;
    }
    m.output(&a.out)?;
    m.write(&a.out)?;
    Ok(())
}

fn embed(g: &Globals, a: EmbedArgs) -> Result<()> {
    let nodes = load_node_texts(&a.nodes)?;
    let mut m = RunManifest::new("embed", g.seed, g.deterministic);
    m.input(&a.nodes)?;
    let features = match a.backend {
        EncoderKind::Hash => encode_nodes(&HashEncoder::new(a.dim, g.seed.unwrap_or(0))?, &nodes)?,
        EncoderKind::Precomputed => {
            let path = a.embeddings.as_ref().ok_or_else(|| {
                transkt_core::Error::Config("the precomputed backend needs --embeddings".into())
            })?;
            m.input(path)?;
            let keys: Vec<String> = nodes.iter().map(NodeText::key).collect();
            load_precomputed_embeddings(path, &keys, Some(a.dim))?
        }
    };
    write(&a.out, &features.to_text())?;
    m.config = json!({
        "backend": format!("{:?}", a.backend).to_lowercase(),
        "dim": a.dim,
    });
    m.output(&a.out)?;
    m.write(&a.out)?;
    Ok(())
}

/// A config with the global overrides applied.
fn load_config(g: &Globals, path: &Path) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if g.deterministic {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| transkt_core::Error::Config(format!("config key `{key}` is required")).into())
}

/// Everything a training run reads, with the input files recorded.
struct Inputs {
    split: DatasetSplit,
    graph: ConceptGraph,
    features: FeatureMatrix,
    original: Option<FeatureMatrix>,
}

fn load_inputs(cfg: &TrainConfig, m: &mut RunManifest, out_dir: &Path) -> Result<(Inputs, PathBuf)> {
    let dataset_path = required(&cfg.dataset, "dataset")?;
    let dataset = Dataset::load(dataset_path)?;
    m.input(dataset_path)?;
    let (split, split_path) = match &cfg.split {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            m.input(p)?;
            (SplitManifest::from_json(&text, &p.display().to_string())?.apply(&dataset), p.clone())
        }
        None => {
            let split = data::split(&dataset, cfg.train_frac, cfg.val_frac, cfg.seed)?;
            let p = out_dir.join("split.json");
            write(&p, &split.manifest.to_json())?;
            m.output(&p)?;
            (split, p)
        }
    };
    let graph_path = required(&cfg.graph, "graph")?;
    let graph = ConceptGraph::load(graph_path)?;
    m.input(graph_path)?;
    let keys = dataset.node_keys();
    let features_path = required(&cfg.features, "features")?;
    let features = load_precomputed_embeddings(features_path, &keys, Some(cfg.dim))?;
    m.input(features_path)?;
    let original = match &cfg.original_features {
        Some(p) => {
            m.input(p)?;
            Some(load_precomputed_embeddings(p, &keys, Some(cfg.dim))?)
        }
        None => None,
    };
    Ok((
        Inputs {
            split,
            graph,
            features,
            original,
        },
        split_path,
    ))
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn out_dir(cfg: &TrainConfig) -> Result<PathBuf> {
    let dir = required(&cfg.out_dir, "out_dir")?.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn train(g: &Globals, a: ConfigArgs) -> Result<()> {
    let mut cfg = load_config(g, &a.config)?;
    let out = out_dir(&cfg)?;
    let mut m = RunManifest::new("train", Some(cfg.seed), cfg.deterministic);
    m.input(&a.config)?;
    let (inputs, split_path) = load_inputs(&cfg, &mut m, &out)?;
    // Stored in the checkpoint so `evaluate` can find the data again.
    for p in [&mut cfg.dataset, &mut cfg.graph, &mut cfg.features, &mut cfg.original_features] {
        *p = p.as_deref().map(absolute);
    }
    cfg.split = Some(absolute(&split_path));
    cfg.out_dir = Some(absolute(&out));

    let keys = inputs.split.train.node_keys();
    let features = trainer::select_features(&cfg, &keys, &inputs.features, inputs.original.as_ref())?;
    let tr = trainer::Trainer::new(
        &cfg,
        TrainData {
            split: &inputs.split,
            graph: &inputs.graph,
            features: &features,
        },
    )?;
    let outcome = tr.train()?;
    let mut test = tr.evaluate(&outcome.model, &inputs.split.test)?;
    test.epoch = outcome.best_epoch;
    let stats = &outcome.negative_stats;
    log::info!(
        "best epoch {}; test auc_x={} auc_y={}; negatives: {} flips, {} replacements, {} fallback flips",
        outcome.best_epoch,
        test.x.auc,
        test.y.auc,
        stats.flips,
        stats.replacements,
        stats.fallback_flips
    );

    let ckpt = out.join("checkpoint.txt");
    let log_path = out.join("train.log");
    let val_path = out.join("val_report.json");
    let test_path = out.join("test_report.json");
    outcome.checkpoint.save(&ckpt)?;
    let lines: String = outcome.epochs.iter().map(|e| e.line() + "\n").collect();
    write(&log_path, &lines)?;
    write(&val_path, &outcome.best_val.to_json())?;
    write(&test_path, &test.to_json())?;

    m.config = serde_json::to_value(&cfg)?;
    for p in [&ckpt, &log_path, &val_path, &test_path] {
        m.output(p)?;
    }
    m.write(&out)?;
    Ok(())
}

/// Rebuilds the training config from the `config.*` checkpoint metadata.
fn config_from_checkpoint(ckpt: &Checkpoint) -> Result<TrainConfig> {
    let toml: String = ckpt
        .meta
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| format!("{k} = {v}\n")))
        .collect();
    Ok(TrainConfig::from_toml(&toml, "checkpoint metadata")?)
}

fn evaluate(g: &Globals, a: EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut m = RunManifest::new("evaluate", g.seed, g.deterministic);
    m.input(&a.checkpoint)?;
    let cfg = match &a.config {
        Some(p) => {
            m.input(p)?;
            load_config(g, p)?
        }
        None => config_from_checkpoint(&ckpt)?,
    };
    let dataset_path = required(&cfg.dataset, "dataset")?;
    let dataset = Dataset::load(dataset_path)?;
    m.input(dataset_path)?;
    let split_path = required(&cfg.split, "split")?;
    let text = std::fs::read_to_string(split_path).with_context(|| format!("reading {}", split_path.display()))?;
    m.input(split_path)?;
    let split = SplitManifest::from_json(&text, &split_path.display().to_string())?.apply(&dataset);
    let graph_path = required(&cfg.graph, "graph")?;
    let graph = ConceptGraph::load(graph_path)?;
    m.input(graph_path)?;
    let keys = dataset.node_keys();
    let summary_path = required(&cfg.features, "features")?;
    let summary = load_precomputed_embeddings(summary_path, &keys, Some(cfg.dim))?;
    m.input(summary_path)?;
    let original = match &cfg.original_features {
        Some(p) if cfg.no_llm => {
            m.input(p)?;
            Some(load_precomputed_embeddings(p, &keys, Some(cfg.dim))?)
        }
        _ => None,
    };
    let features = trainer::select_features(&cfg, &keys, &summary, original.as_ref())?;

    let (name, part) = match a.split {
        SplitName::Train => ("train", &split.train),
        SplitName::Val => ("val", &split.val),
        SplitName::Test => ("test", &split.test),
    };
    let report = trainer::evaluate(&ckpt, &graph, &features, part, a.eta)?;
    println!("{}", report.to_json());
    let out = a.out.clone().unwrap_or_else(|| {
        a.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("eval_{name}.json"))
    });
    write(&out, &report.to_json())?;
    m.config = json!({ "split": name, "eta": a.eta });
    m.output(&out)?;
    m.write(&out)?;
    Ok(())
}

fn ablate(g: &Globals, a: ConfigArgs) -> Result<()> {
    let cfg = load_config(g, &a.config)?;
    let out = out_dir(&cfg)?;
    let mut m = RunManifest::new("ablate", Some(cfg.seed), cfg.deterministic);
    m.input(&a.config)?;
    let (inputs, _) = load_inputs(&cfg, &mut m, &out)?;
    let rows = run_ablation_suite(
        &cfg,
        &inputs.split,
        &inputs.graph,
        &inputs.features,
        inputs.original.as_ref(),
    )?;
    let table = ablation_table(&rows);
    print!("{table}");
    let json_path = out.join("ablation.json");
    let table_path = out.join("ablation.txt");
    write(&json_path, &serde_json::to_string_pretty(&rows)?)?;
    write(&table_path, &table)?;
    m.config = serde_json::to_value(&cfg)?;
    m.output(&json_path)?;
    m.output(&table_path)?;
    m.write(&out)?;
    Ok(())
}

fn sample_negatives(g: &Globals, a: SampleNegativesArgs) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    let dataset = Dataset::load(&a.dataset)?;
    let mut m = RunManifest::new("sample-negatives", Some(seed), g.deterministic);
    m.input(&a.dataset)?;
    let table = match &a.split {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            m.input(p)?;
            let split = SplitManifest::from_json(&text, &p.display().to_string())?.apply(&dataset);
            DifficultyTable::build(&split.train)
        }
        None => DifficultyTable::build(&dataset),
    };
    let config = NegativeConfig {
        theta1: a.theta1,
        theta2: a.theta2,
    };
    config.validate()?;

    let mut records = Vec::new();
    let mut stats = SampleStats::default();
    for (i, (learner, triple)) in dataset.learners.iter().enumerate() {
        let mut r = rng::stream(seed, &[tag::NEGATIVES, i as u64]);
        let sample = hybrid_sample_steps(&triple.merged, &table, &config, &mut r);
        stats.merge(&sample.stats());
        // Positions stand in for timestamps, which the encoded dataset drops.
        for (t, step) in sample.steps().into_iter().enumerate() {
            records.push(InteractionRecord {
                learner_id: learner.clone(),
                course: step.course,
                question_id: dataset.questions.id(step.question).to_string(),
                response: step.response,
                timestamp: t as i64,
            });
        }
    }
    if records.is_empty() {
        bail!(transkt_core::Error::EmptyDataset);
    }
    log::info!(
        "{} flips, {} replacements ({} from the course pool, {} fallback flips)",
        stats.flips,
        stats.replacements,
        stats.course_pool,
        stats.fallback_flips
    );
    write(&a.out, &InteractionLog::from_records(records).to_csv())?;
    m.config = json!({
        "theta1": a.theta1,
        "theta2": a.theta2,
        "courses": Course::BOTH.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
    });
    m.output(&a.out)?;
    m.write(&a.out)?;
    Ok(())
}

fn synth_cmd(g: &Globals, a: SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut config = SynthConfig::from_toml(&text, &a.config.display().to_string())?;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    let out = synth::generate(&config)?;
    let paths = out.write(&a.out)?;
    log::info!(
        "{} learners, {} interactions, {} ground-truth concept edges",
        out.dataset.learners.len(),
        out.dataset.num_interactions(),
        out.graph.cc_edges.len()
    );
    let mut m = RunManifest::new("synth", Some(config.seed), g.deterministic);
    m.config = serde_json::to_value(&config)?;
    m.input(&a.config)?;
    for p in &paths {
        m.output(p)?;
    }
    m.write(&a.out)?;
    Ok(())
}
