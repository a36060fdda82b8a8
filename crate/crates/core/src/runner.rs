//! Command implementations shared by the CLI and the test suites.
//!
//! Output layout under `out`:
//!
//! ```text
//! index/index.jsonl
//! reports/<run-id>/transcripts.jsonl   one SampleTranscript per line
//! reports/<run-id>/summary.json        metrics and call totals
//! reports/<run-id>/timings.jsonl       per-call cache/latency data (volatile)
//! reports/<run-id>/run.json            run id, timestamps, backend stats (volatile)
//! cache/responses.jsonl
//! ```

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backend::{
    BackendError, BackendKind, ChatBackend, ClientStats, HttpBackend, LmmClient, MockBackend, ResponseCache,
};
use crate::config::{ConfigError, RunConfig};
use crate::eval::{evaluate_report, parse_report, EvalError, ErrorPolicy, MetricsSummary, RunInfo};
use crate::model::{load_manifest, DatasetManifest, ManifestError};
use crate::pipeline::{infer_sample, Mode, PipelineContext, SampleTranscript};
use crate::prompts::{PromptSet, TemplateError};
use crate::retrieval::{
    build_index, load_embeddings, load_index, render_index, retrieve_similar, EmbeddingSet, Neighbors,
    RetrievalError, SimilarityIndex,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("prompt template: {0}")]
    Template(#[from] TemplateError),
    #[error("manifest: {0}")]
    Manifest(#[from] ManifestError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("unknown meme id {0:?}")]
    UnknownTargetId(String),
    #[error("no K values to sweep")]
    EmptySweep,
    #[error("index {path} does not match the run: {detail}")]
    IndexMismatch { path: String, detail: String },
    #[error("backend unreachable: all {0} samples failed to connect")]
    BackendUnreachable(usize),
}

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const BACKEND: i32 = 4;
    pub const DATA: i32 = 5;
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(ConfigError::Io { .. })
            | RunError::Template(TemplateError::Io { .. })
            | RunError::Manifest(ManifestError::Io { .. })
            | RunError::Retrieval(RetrievalError::Io { .. })
            | RunError::Io { .. } => exit::IO,
            RunError::Config(_) | RunError::Template(_) | RunError::EmptySweep => exit::CONFIG,
            RunError::Backend(_) | RunError::BackendUnreachable(_) => exit::BACKEND,
            RunError::Manifest(_)
            | RunError::Retrieval(_)
            | RunError::Eval(_)
            | RunError::UnknownTargetId(_)
            | RunError::IndexMismatch { .. } => exit::DATA,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io { path: path.display().to_string(), detail: e.to_string() }
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn load_inputs(config: &RunConfig) -> Result<(DatasetManifest, Option<EmbeddingSet>), RunError> {
    let manifest = load_manifest(config.require_manifest()?)?;
    let embeddings = match &config.embeddings {
        Some(p) => Some(load_embeddings(p)?),
        None => None,
    };
    Ok((manifest, embeddings))
}

fn check_index(index: &SimilarityIndex, expected: &SimilarityIndex, path: &Path) -> Result<(), RunError> {
    let mismatch = |detail: String| RunError::IndexMismatch { path: path.display().to_string(), detail };
    if index.weights() != expected.weights() {
        let (w, e) = (index.weights(), expected.weights());
        return Err(mismatch(format!(
            "weights ({}, {}) vs configured ({}, {})",
            w.lambda_v, w.lambda_t, e.lambda_v, e.lambda_t
        )));
    }
    if index.dim() != expected.dim() {
        return Err(mismatch(format!("dim {} vs embeddings dim {}", index.dim(), expected.dim())));
    }
    if index.encoder() != expected.encoder() {
        return Err(mismatch(format!("encoder {:?} vs {:?}", index.encoder(), expected.encoder())));
    }
    let ids = |i: &SimilarityIndex| i.entries().iter().map(|e| e.meme_id.clone()).collect::<Vec<_>>();
    if ids(index) != ids(expected) {
        return Err(mismatch("entries differ from the manifest's reference memes".into()));
    }
    Ok(())
}

/// The similarity index for a run: loaded from `config.index` when set and
/// checked against the inputs, otherwise built in memory.
pub fn resolve_index(
    config: &RunConfig,
    manifest: &DatasetManifest,
    embeddings: &EmbeddingSet,
) -> Result<SimilarityIndex, RunError> {
    let built = build_index(manifest, embeddings, config.weights()?)?;
    if let Some(path) = &config.index {
        let loaded = load_index(path)?;
        check_index(&loaded, &built, path)?;
        return Ok(loaded);
    }
    Ok(built)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSummary {
    pub path: PathBuf,
    pub entries: usize,
    pub dim: usize,
}

pub fn cmd_index(config: &RunConfig) -> Result<IndexSummary, RunError> {
    let weights = config.weights()?;
    let manifest = load_manifest(config.require_manifest()?)?;
    let embeddings = load_embeddings(config.require_embeddings()?)?;
    let index = build_index(&manifest, &embeddings, weights)?;
    let path = config.index_path();
    write_file(&path, &render_index(&index))?;
    Ok(IndexSummary { path, entries: index.len(), dim: index.dim() })
}

pub fn cmd_retrieve(config: &RunConfig, target_id: &str) -> Result<Neighbors, RunError> {
    let (manifest, embeddings) = load_inputs(config)?;
    if manifest.get(target_id).is_none() {
        return Err(RunError::UnknownTargetId(target_id.into()));
    }
    let embeddings = embeddings.ok_or(ConfigError::Missing("embeddings"))?;
    let index = resolve_index(config, &manifest, &embeddings)?;
    let record = embeddings
        .get(target_id)
        .ok_or_else(|| RetrievalError::MissingEmbedding(target_id.into()))?;
    Ok(retrieve_similar(&index, record, config.k)?)
}

pub fn build_client(config: &RunConfig) -> Result<LmmClient, RunError> {
    let backend: Arc<dyn ChatBackend> = match config.backend.kind {
        BackendKind::Mock => {
            let path = config.mock_scenario.as_deref().ok_or(ConfigError::Missing("mock-scenario"))?;
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            Arc::new(MockBackend::from_scenario(&text)?)
        }
        BackendKind::Http => Arc::new(HttpBackend::new(&config.backend)?),
    };
    let client = LmmClient::new(backend, config.backend.max_inflight);
    if !config.cache {
        return Ok(client);
    }
    Ok(client.with_cache(ResponseCache::open(&config.cache_path())?))
}

/// Runs every meme in `targets`, at most `parallelism` at a time. Results
/// come back in input order.
pub async fn run_samples(
    ctx: &PipelineContext,
    targets: &[crate::model::Meme],
    mode: Mode,
    parallelism: usize,
) -> Vec<SampleTranscript> {
    stream::iter(targets.iter().map(|t| infer_sample(ctx, t, mode)))
        .buffered(parallelism.max(1))
        .collect()
        .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    pub started_at: String,
    pub finished_at: String,
    pub duration_ms: u64,
    pub samples: usize,
    pub backend_calls: u64,
    pub cache_hits: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub report_dir: PathBuf,
    pub summary: MetricsSummary,
    pub stats: ClientStats,
}

impl RunOutcome {
    pub fn transcripts_path(&self) -> PathBuf {
        self.report_dir.join("transcripts.jsonl")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.report_dir.join("summary.json")
    }
}

pub fn default_run_id(config: &RunConfig) -> String {
    format!("{}-{}", chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ"), config.hash())
}

fn render_transcripts(transcripts: &[SampleTranscript]) -> String {
    transcripts
        .iter()
        .map(|t| serde_json::to_string(t).expect("transcripts serialize") + "\n")
        .collect()
}

fn render_timings(transcripts: &[SampleTranscript]) -> String {
    let mut out = String::new();
    for t in transcripts {
        for c in &t.calls {
            let line = json!({
                "target_id": t.target_id,
                "sequence_no": c.sequence_no,
                "agent_role": c.agent_role,
                "cached": c.cached,
                "latency_ms": c.latency_ms,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    out
}

fn write_transcripts(path: &Path, transcripts: &[SampleTranscript]) -> Result<(), RunError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(render_transcripts(transcripts).as_bytes()).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Runs the pipeline over the manifest's test split and writes the report.
pub async fn cmd_run(config: &RunConfig, run_id: Option<&str>) -> Result<RunOutcome, RunError> {
    config.validate_for_run()?;
    let started = Instant::now();
    let started_at = chrono::Utc::now().to_rfc3339();
    let prompts = PromptSet::load(&config.prompts, config.max_insights)?;
    let (manifest, embeddings) = load_inputs(config)?;
    if config.mode == Mode::Baseline {
        if manifest.tests().next().is_none() {
            return Err(ManifestError::EmptySplit(crate::model::Split::Test).into());
        }
    } else {
        manifest.check_runnable()?;
    }
    let index = match (&embeddings, config.mode.needs_index()) {
        (Some(e), true) => Some(resolve_index(config, &manifest, e)?),
        _ => None,
    };
    let client = build_client(config)?;
    let weights = config.weights()?;
    let run = RunInfo {
        mode: Some(config.mode),
        k: Some(config.k),
        lambda_v: Some(weights.lambda_v),
        lambda_t: Some(weights.lambda_t),
        seed: Some(config.seed),
        model: Some(client.model_name().to_owned()),
    };
    let ctx = PipelineContext {
        client,
        prompts,
        references: manifest.references().cloned().collect(),
        index,
        embeddings,
        k: config.k,
        seed: config.seed,
    };
    let targets: Vec<_> = manifest.tests().cloned().collect();
    let transcripts = run_samples(&ctx, &targets, config.mode, config.sample_parallelism).await;

    let run_id = run_id.map(str::to_owned).unwrap_or_else(|| default_run_id(config));
    let report_dir = config.out.join("reports").join(&run_id);
    fs::create_dir_all(&report_dir).map_err(|e| io_err(&report_dir, e))?;
    write_transcripts(&report_dir.join("transcripts.jsonl"), &transcripts)?;
    write_file(&report_dir.join("timings.jsonl"), &render_timings(&transcripts))?;

    let mut summary = evaluate_report(&transcripts, &manifest, config.error_policy)?;
    summary.run = run;
    write_file(&report_dir.join("summary.json"), &to_json_pretty(&summary))?;

    let stats = ctx.client.stats();
    let record = RunRecord {
        run_id: run_id.clone(),
        config_hash: config.hash(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        duration_ms: started.elapsed().as_millis() as u64,
        samples: transcripts.len(),
        backend_calls: stats.backend_calls,
        cache_hits: stats.cache_hits,
    };
    write_file(&report_dir.join("run.json"), &to_json_pretty(&record))?;

    let unreachable = transcripts.iter().all(|t| t.errors.iter().any(|e| e.is_connectivity()));
    if !transcripts.is_empty() && unreachable {
        return Err(RunError::BackendUnreachable(transcripts.len()));
    }
    Ok(RunOutcome { run_id, report_dir, summary, stats })
}

/// Scores a transcripts file against a manifest and writes
/// `eval-summary.json` next to the report.
pub fn cmd_eval(report: &Path, manifest: &Path, policy: ErrorPolicy) -> Result<MetricsSummary, RunError> {
    let manifest = load_manifest(manifest)?;
    let text = fs::read_to_string(report).map_err(|e| io_err(report, e))?;
    let transcripts = parse_report(&text)?;
    if transcripts.is_empty() {
        return Err(EvalError::NoScoredSamples.into());
    }
    let summary = evaluate_report(&transcripts, &manifest, policy)?;
    let out = report.with_file_name("eval-summary.json");
    write_file(&out, &to_json_pretty(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub total_calls: u64,
    pub run_id: String,
}

/// Sorted, deduplicated K values; duplicates are reported back.
pub fn normalize_k_values(k_values: &[usize]) -> Result<(Vec<usize>, Vec<usize>), RunError> {
    if k_values.is_empty() {
        return Err(RunError::EmptySweep);
    }
    let mut seen = BTreeSet::new();
    let mut dups = Vec::new();
    for &k in k_values {
        if !seen.insert(k) {
            dups.push(k);
        }
    }
    Ok((seen.into_iter().collect(), dups))
}

pub async fn cmd_sweep_k(config: &RunConfig, k_values: &[usize], run_id: Option<&str>) -> Result<Vec<SweepRow>, RunError> {
    let (ks, dups) = normalize_k_values(k_values)?;
    if !dups.is_empty() {
        log::warn!("ignoring duplicate K values {dups:?}");
    }
    let base = run_id.map(str::to_owned).unwrap_or_else(|| default_run_id(config));
    let mut rows = Vec::with_capacity(ks.len());
    for k in ks {
        let mut cfg = config.clone();
        cfg.k = k;
        let id = format!("{base}-k{k}");
        let outcome = cmd_run(&cfg, Some(&id)).await?;
        rows.push(SweepRow {
            k,
            accuracy: outcome.summary.accuracy,
            macro_f1: outcome.summary.macro_f1,
            total_calls: outcome.summary.total_calls,
            run_id: id,
        });
    }
    Ok(rows)
}

pub fn render_sweep_table(rows: &[SweepRow]) -> String {
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
    let mut out = format!("{:>4}  {:>8}  {:>8}  {:>11}\n", "K", "accuracy", "macro-F1", "total_calls");
    for r in rows {
        out.push_str(&format!("{:>4}  {:>8}  {:>8}  {:>11}\n", r.k, fmt(r.accuracy), fmt(r.macro_f1), r.total_calls));
    }
    out
}
