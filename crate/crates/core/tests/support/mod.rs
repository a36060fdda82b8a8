#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use mind_core::backend::{rendered_prompt, BackendError, ChatBackend, ChatMessage, LmmClient};
use mind_core::model::{load_manifest, DatasetManifest, Meme, RawLabel};
use mind_core::pipeline::PipelineContext;
use mind_core::prompts::PromptSet;
use mind_core::retrieval::{build_index, render_embeddings, retrieve_similar, EmbeddingRecord, EmbeddingSet, FusionWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub const DERIVING_MARK: &str = "Insights collected from previously studied memes:";
pub const DEBATER_MARK: &str = "Consider this note above with caution";
pub const JUDGE_MARK: &str = "there are two debaters";
pub const BASELINE_MARK: &str = "Please leverage your extensive knowledge";

type Responder = dyn Fn(&str) -> String + Send + Sync;

/// Scripted backend that remembers every (prompt, reply) pair.
pub struct Recorder {
    respond: Box<Responder>,
    log: Mutex<Vec<(String, String)>>,
}

impl Recorder {
    pub fn new(respond: impl Fn(&str) -> String + Send + Sync + 'static) -> Arc<Self> {
        Arc::new(Recorder { respond: Box::new(respond), log: Mutex::new(Vec::new()) })
    }

    pub fn log(&self) -> Vec<(String, String)> {
        self.log.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn prompt_for(&self, response: &str) -> Option<String> {
        self.log().into_iter().find(|(_, r)| r == response).map(|(p, _)| p)
    }
}

#[async_trait]
impl ChatBackend for Recorder {
    fn model_name(&self) -> &str {
        "recorder"
    }

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let prompt = rendered_prompt(messages);
        let reply = (self.respond)(&prompt);
        self.log.lock().unwrap().push((prompt, reply.clone()));
        Ok(reply)
    }
}

/// The first `Text: "..."` value of a prompt.
pub fn meme_text(prompt: &str) -> &str {
    let start = prompt.find("Text: \"").expect("prompt names the meme text") + 7;
    let len = prompt[start..].find('"').expect("closing quote");
    &prompt[start..start + len]
}

/// Prior insights shown in a deriving prompt, as bullet-less items.
pub fn prior_insights(prompt: &str) -> Vec<String> {
    let start = prompt.find(DERIVING_MARK).expect("deriving prompt") + DERIVING_MARK.len();
    let block = prompt[start..].trim_start_matches('\n');
    let block = &block[..block.find("\n\n").unwrap_or(block.len())];
    if block.trim() == "(none)" {
        return Vec::new();
    }
    block.lines().map(|l| l.trim_start_matches("- ").to_owned()).collect()
}

/// Items of the note in a debater prompt.
pub fn note_items(prompt: &str) -> Vec<String> {
    let start = prompt.find("Note: [\n").expect("debater prompt") + 8;
    let end = prompt[start..].find("\n]").expect("note end") + start;
    prompt[start..end].lines().map(|l| l.trim_start_matches("- ").to_owned()).collect()
}

/// Deriving reply that keeps the prior insights and adds one for the meme
/// shown, so every chain state is distinct and traceable.
pub fn chaining_deriver(prompt: &str) -> String {
    let mut items = prior_insights(prompt);
    items.push(format!("saw {}", meme_text(prompt)));
    items.iter().map(|i| format!("- {i}\n")).collect()
}

pub fn verdict(label: &str) -> String {
    format!("Thought: scripted reasoning.\nAnswer: {label}")
}

pub struct World {
    pub dir: TempDir,
    pub manifest_path: PathBuf,
    pub embeddings_path: PathBuf,
    pub manifest: DatasetManifest,
    pub embeddings: EmbeddingSet,
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

/// Writes a synthetic dataset: one small image file per meme, a manifest
/// with relative image paths, and random embeddings.
pub fn world(n_refs: usize, n_tests: usize, dim: usize, seed: u64) -> World {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("img")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = String::new();
    let mut embeddings = EmbeddingSet::new(dim, "synthetic");
    let ids = (0..n_refs)
        .map(|i| (format!("r{i:03}"), "reference", format!("reference caption {i}")))
        .chain((0..n_tests).map(|i| (format!("t{i:03}"), "test", format!("test caption {i}"))));
    for (n, (id, split, text)) in ids.enumerate() {
        let image = format!("img/{id}.png");
        let mut bytes = b"\x89PNG\r\n\x1a\n".to_vec();
        bytes.extend(id.as_bytes());
        std::fs::write(dir.path().join(&image), bytes).unwrap();
        let label = RawLabel::ALL[n % RawLabel::ALL.len()].as_str();
        let row = serde_json::json!({"id": id, "image": image, "text": text, "label": label, "split": split});
        manifest.push_str(&format!("{row}\n"));
        embeddings
            .insert(EmbeddingRecord { meme_id: id.clone(), image_vec: random_vec(&mut rng, dim), text_vec: random_vec(&mut rng, dim) })
            .unwrap();
    }
    let manifest_path = dir.path().join("manifest.jsonl");
    let embeddings_path = dir.path().join("embeddings.jsonl");
    std::fs::write(&manifest_path, manifest).unwrap();
    std::fs::write(&embeddings_path, render_embeddings(&embeddings)).unwrap();
    let manifest = load_manifest(&manifest_path).unwrap();
    World { dir, manifest_path, embeddings_path, manifest, embeddings }
}

impl World {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn target(&self, n: usize) -> &Meme {
        self.manifest.tests().nth(n).unwrap()
    }

    pub fn context(&self, backend: Arc<dyn ChatBackend>, k: usize, seed: u64) -> PipelineContext {
        let index = build_index(&self.manifest, &self.embeddings, FusionWeights::default()).unwrap();
        PipelineContext {
            client: LmmClient::new(backend, 8),
            prompts: PromptSet::default(),
            references: self.manifest.references().cloned().collect(),
            index: Some(index),
            embeddings: Some(self.embeddings.clone()),
            k,
            seed,
        }
    }

    /// Captions of the target's top-k references, in retrieval order.
    pub fn neighbor_texts(&self, target: &Meme, k: usize) -> Vec<String> {
        let index = build_index(&self.manifest, &self.embeddings, FusionWeights::default()).unwrap();
        let n = retrieve_similar(&index, self.embeddings.get(&target.id).unwrap(), k).unwrap();
        n.items.iter().map(|n| self.manifest.get(&n.id).unwrap().text.clone()).collect()
    }

    pub fn write(&self, name: &str, contents: &str) -> PathBuf {
        let p = self.path().join(name);
        std::fs::write(&p, contents).unwrap();
        p
    }
}

/// Responder for a full-mode sample whose debaters answer `fwd` and `back`
/// and whose judge answers `judge`. The forward debater is recognised by
/// its note starting with the first retrieved meme.
pub fn debate_script(
    first_neighbor: String,
    fwd: &'static str,
    back: &'static str,
    judge: &'static str,
) -> impl Fn(&str) -> String + Send + Sync + 'static {
    let first = format!("saw {first_neighbor}");
    move |prompt: &str| {
        if prompt.contains(DERIVING_MARK) {
            chaining_deriver(prompt)
        } else if prompt.contains(JUDGE_MARK) {
            verdict(judge)
        } else if prompt.contains(DEBATER_MARK) {
            let items = note_items(prompt);
            verdict(if items.first() == Some(&first) { fwd } else { back })
        } else {
            verdict("harmless")
        }
    }
}

/// Mock scenario with a stable mix of verdicts and some judge calls.
pub const SCENARIO: &str = concat!(
    r#"{"match": "there are two debaters", "response": "Thought: Debater 1 reads the target better.\nAnswer: harmful"}"#,
    "\n",
    r#"{"match": "hash:0/2", "response": "Thought: The caption demeans a group.\nAnswer: harmful"}"#,
    "\n",
    r#"{"match": "default", "response": "Thought: A benign joke.\nAnswer: harmless"}"#,
    "\n",
);

pub fn run_config(w: &World, out: &str) -> mind_core::config::RunConfig {
    let scenario = w.write("scenario.jsonl", SCENARIO);
    let mut c = mind_core::config::RunConfig {
        manifest: Some(w.manifest_path.clone()),
        embeddings: Some(w.embeddings_path.clone()),
        mock_scenario: Some(scenario),
        out: w.path().join(out),
        ..Default::default()
    };
    c.backend.kind = mind_core::backend::BackendKind::Mock;
    c
}

/// Accuracy and macro-F1 computed straight from the label vectors,
/// without confusion counts. `true` is harmful.
pub fn oracle_metrics(pred: &[bool], gold: &[bool]) -> (f64, f64) {
    let n = pred.len() as f64;
    let correct = pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64;
    let f1_for = |class: bool| {
        let hit = pred.iter().zip(gold).filter(|(p, g)| **p == class && **g == class).count() as f64;
        let predicted = pred.iter().filter(|p| **p == class).count() as f64;
        let actual = gold.iter().filter(|g| **g == class).count() as f64;
        let precision = if predicted > 0.0 { hit / predicted } else { 0.0 };
        let recall = if actual > 0.0 { hit / actual } else { 0.0 };
        if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 }
    };
    (correct / n, (f1_for(true) + f1_for(false)) / 2.0)
}

pub fn to_label(harmful: bool) -> mind_core::model::BinaryLabel {
    if harmful {
        mind_core::model::BinaryLabel::Harmful
    } else {
        mind_core::model::BinaryLabel::Harmless
    }
}
