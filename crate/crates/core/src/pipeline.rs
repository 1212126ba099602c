//! End-to-end commands behind the CLI: run configs, comparisons and exports.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{apply_preprocess, fit_preprocess, load_csv, make_splits, ProcessedDataset, Schema, TabularDataset};
use crate::embed::{load_embeddings, stub_embed, EmbeddingMatrix};
use crate::gnnhead::HeadOptions;
use crate::graph::{build_graph, BipartiteGraph, GraphOptions};
use crate::provenance::config_hash;
use crate::report;
use crate::stats::{compare, Comparison, ScoreTable};
use crate::train::{head_task, train_with_precision, RunResult, ScoreRecord, TrainConfig};

pub const RESULTS_FILE: &str = "results.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Split,
    Preprocess,
    Graph,
    Embed,
    Train,
    Compare,
    Write,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Split => "split",
            Stage::Preprocess => "preprocess",
            Stage::Graph => "graph",
            Stage::Embed => "embed",
            Stage::Train => "train",
            Stage::Compare => "compare",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

/// A failure tagged with where it happened.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub dataset: Option<String>,
    pub seed: Option<u64>,
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage failed", self.stage)?;
        if let Some(d) = &self.dataset {
            write!(f, " for dataset `{d}`")?;
        }
        if let Some(s) = self.seed {
            write!(f, " (seed {s})")?;
        }
        write!(f, ": {}", self.source)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(self.source.as_ref())
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

trait Context<T> {
    fn at(self, stage: Stage, dataset: Option<&str>, seed: Option<u64>) -> Result<T>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> Context<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage, dataset: Option<&str>, seed: Option<u64>) -> Result<T> {
        self.map_err(|e| PipelineError { stage, dataset: dataset.map(str::to_string), seed, source: Box::new(e) })
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigProblem(pub String);

fn config_error(message: impl Into<String>) -> PipelineError {
    PipelineError { stage: Stage::Config, dataset: None, seed: None, source: Box::new(ConfigProblem(message.into())) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub csv: PathBuf,
    pub schema: PathBuf,
    /// Precomputed row embeddings, required when the embedding source is `file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Hashed-token embeddings computed from the preprocessed features.
    Stub { dim: usize, seed: u64 },
    /// Each dataset's `embeddings` file.
    File,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_workers() -> usize {
    1
}

fn default_method() -> String {
    "bolero".to_string()
}

/// Everything a run needs. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_method")]
    pub method: String,
    pub datasets: Vec<DatasetEntry>,
    pub embedding: EmbeddingSource,
    #[serde(default)]
    pub graph: GraphOptions,
    #[serde(default)]
    pub head: HeadOptions,
    /// The seed field is replaced by each entry of `seeds`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).at(Stage::Config, None, None)?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).at(Stage::Config, None, None)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of the configuration as written (paths unresolved).
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Checks every setting and referenced file before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(config_error("no datasets listed"));
        }
        if self.seeds.is_empty() {
            return Err(config_error("no seeds listed"));
        }
        if self.workers == 0 {
            return Err(config_error("workers must be at least 1"));
        }
        if self.method.trim().is_empty() {
            return Err(config_error("method name is empty"));
        }
        let mut names = std::collections::BTreeSet::new();
        for d in &self.datasets {
            if !names.insert(&d.name) {
                return Err(config_error(format!("dataset name `{}` is used twice", d.name)));
            }
            if d.name.is_empty() || d.name.contains(['/', '\\']) {
                return Err(config_error(format!("dataset name `{}` is not a valid file stem", d.name)));
            }
            for p in [&d.csv, &d.schema] {
                if !self.resolve(p).is_file() {
                    return Err(config_error(format!("dataset `{}`: file {} does not exist", d.name, self.resolve(p).display())));
                }
            }
            Schema::from_json_file(self.resolve(&d.schema)).at(Stage::Config, Some(&d.name), None)?;
            match (&self.embedding, &d.embeddings) {
                (EmbeddingSource::File, None) => {
                    return Err(config_error(format!("dataset `{}` needs an `embeddings` file", d.name)))
                }
                (EmbeddingSource::File, Some(p)) if !self.resolve(p).is_file() => {
                    return Err(config_error(format!("dataset `{}`: file {} does not exist", d.name, self.resolve(p).display())))
                }
                _ => {}
            }
        }
        if let EmbeddingSource::Stub { dim, .. } = self.embedding {
            if dim < 8 {
                return Err(config_error(format!("stub embedding dim must be at least 8, got {dim}")));
            }
        }
        self.train.validate().at(Stage::Config, None, None)?;
        // the task only changes the output width
        self.head.with_task(crate::gnnhead::HeadTask::Regression).validate().at(Stage::Config, None, None)?;
        Ok(())
    }

    fn load(&self, entry: &DatasetEntry) -> Result<TabularDataset> {
        let name = Some(entry.name.as_str());
        let schema = Schema::from_json_file(self.resolve(&entry.schema)).at(Stage::Load, name, None)?;
        load_csv(self.resolve(&entry.csv), &schema).at(Stage::Load, name, None)
    }
}

/// Split, preprocess, graph and embeddings for one dataset and seed.
pub struct Prepared {
    pub data: ProcessedDataset,
    pub graph: BipartiteGraph,
    pub embeddings: EmbeddingMatrix,
}

fn prepare(cfg: &RunConfig, entry: &DatasetEntry, table: &TabularDataset, seed: u64) -> Result<Prepared> {
    let name = Some(entry.name.as_str());
    let split = make_splits(table, seed).at(Stage::Split, name, Some(seed))?;
    let state = fit_preprocess(&split).at(Stage::Preprocess, name, Some(seed))?;
    let data = apply_preprocess(&split, &state).at(Stage::Preprocess, name, Some(seed))?;
    let graph = build_graph(&data, &cfg.graph);
    let embeddings = match (&cfg.embedding, &entry.embeddings) {
        (EmbeddingSource::Stub { dim, seed: embed_seed }, _) => stub_embed(&data, *dim, *embed_seed),
        (EmbeddingSource::File, Some(p)) => load_embeddings(cfg.resolve(p), data.num_rows()),
        (EmbeddingSource::File, None) => {
            return Err(config_error(format!("dataset `{}` needs an `embeddings` file", entry.name)))
        }
    }
    .at(Stage::Embed, name, Some(seed))?;
    Ok(Prepared { data, graph, embeddings })
}

/// One finished (dataset, seed) job.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dataset: String,
    pub record: ScoreRecord,
    pub result: RunResult,
    pub checkpoint: PathBuf,
}

fn write_file(path: &Path, contents: &[u8], dataset: Option<&str>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(Stage::Write, dataset, None)?;
    }
    fs::write(path, contents).at(Stage::Write, dataset, None)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().at(Stage::Config, None, None)
}

/// Trains every (dataset, seed) pair on a pool of `workers` threads and
/// writes `results.jsonl` (dataset order, then seed order) plus one
/// checkpoint per run.
pub fn cmd_run(cfg: &RunConfig) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let hash = cfg.hash();
    let out_dir = cfg.output_dir();
    let tables: Vec<TabularDataset> = cfg.datasets.iter().map(|d| cfg.load(d)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> =
        (0..cfg.datasets.len()).flat_map(|d| cfg.seeds.iter().map(move |&s| (d, s))).collect();
    let outcomes: Vec<RunOutcome> = pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(d, seed)| {
                let entry = &cfg.datasets[d];
                let name = Some(entry.name.as_str());
                let prepared = prepare(cfg, entry, &tables[d], seed)?;
                let head = cfg.head.with_task(head_task(&prepared.data));
                let train = TrainConfig { seed, ..cfg.train };
                let (result, params) = train_with_precision(&prepared.data, &prepared.graph, &prepared.embeddings, &head, &train)
                    .at(Stage::Train, name, Some(seed))?;
                let checkpoint = out_dir.join("checkpoints").join(format!("{}_seed{seed}.ckpt", entry.name));
                fs::create_dir_all(checkpoint.parent().unwrap()).at(Stage::Write, name, Some(seed))?;
                params.save(&checkpoint, &head).at(Stage::Write, name, Some(seed))?;
                let record = ScoreRecord {
                    dataset: entry.name.clone(),
                    method: cfg.method.clone(),
                    seed,
                    task: prepared.data.task,
                    metric_value: result.test_metric,
                    metric_name: Some(result.metric_name.clone()),
                    epochs: Some(result.epochs),
                    config_hash: Some(hash.clone()),
                    seconds: Some(result.seconds),
                };
                Ok(RunOutcome { dataset: entry.name.clone(), record, result, checkpoint })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut lines = String::new();
    for o in &outcomes {
        lines += &serde_json::to_string(&o.record).expect("records serialize");
        lines.push('\n');
    }
    write_file(&out_dir.join(RESULTS_FILE), lines.as_bytes(), None)?;
    Ok(outcomes)
}

/// Output of [`cmd_compare`].
#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub comparisons: Vec<Comparison>,
    /// Friedman gate notes, one per task.
    pub notes: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Reads score files, runs the comparison and writes leaderboard and
/// pairwise tables (CSV and text) into `out_dir`.
pub fn cmd_compare<P: AsRef<Path>>(score_files: &[P], alpha: f64, out_dir: &Path) -> Result<CompareOutput> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(config_error(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let scores = ScoreTable::from_jsonl_files(score_files).at(Stage::Load, None, None)?;
    let comparisons = compare(&scores, alpha).at(Stage::Compare, None, None)?;
    let inputs: Vec<String> = score_files
        .iter()
        .map(|p| p.as_ref().file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let hash = config_hash(&serde_json::json!({ "alpha": alpha, "inputs": inputs }));
    let notes = comparisons.iter().map(report::friedman_note).collect();
    let outputs = [
        ("leaderboard.csv", report::leaderboard_csv(&comparisons, &hash)),
        ("pairwise.csv", report::pairwise_csv(&comparisons, &hash)),
        ("leaderboard.txt", report::leaderboard_text(&comparisons, &hash)),
        ("pairwise.txt", report::pairwise_text(&comparisons, &hash)),
    ];
    let mut files = Vec::new();
    for (name, body) in outputs {
        let path = out_dir.join(name);
        write_file(&path, body.as_bytes(), None)?;
        files.push(path);
    }
    Ok(CompareOutput { comparisons, notes, files })
}

/// Writes `graphs/graph_<dataset>.json` for every dataset, using the split of
/// the first seed.
pub fn cmd_export_graph(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let hash = cfg.hash();
    let seed = cfg.seeds[0];
    let mut written = Vec::new();
    for entry in &cfg.datasets {
        let name = Some(entry.name.as_str());
        let table = cfg.load(entry)?;
        let split = make_splits(&table, seed).at(Stage::Split, name, Some(seed))?;
        let state = fit_preprocess(&split).at(Stage::Preprocess, name, Some(seed))?;
        let data = apply_preprocess(&split, &state).at(Stage::Preprocess, name, Some(seed))?;
        let graph = build_graph(&data, &cfg.graph);
        let mut bytes = Vec::new();
        graph.write_json(&mut bytes, Some(&hash)).at(Stage::Graph, name, Some(seed))?;
        let path = cfg.output_dir().join("graphs").join(format!("graph_{}.json", entry.name));
        write_file(&path, &bytes, name)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes stub embeddings `embeddings/<dataset>.emb` for every dataset, using
/// the split of the first seed. Needs a `stub` embedding source.
pub fn cmd_stub_embed(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let EmbeddingSource::Stub { .. } = cfg.embedding else {
        return Err(config_error("stub-embed needs `embedding.kind = stub`"));
    };
    let seed = cfg.seeds[0];
    let mut written = Vec::new();
    for entry in &cfg.datasets {
        let table = cfg.load(entry)?;
        let prepared = prepare(cfg, entry, &table, seed)?;
        let path = cfg.output_dir().join("embeddings").join(format!("{}.emb", entry.name));
        write_file(&path, &prepared.embeddings.to_bytes(), Some(&entry.name))?;
        written.push(path);
    }
    Ok(written)
}
