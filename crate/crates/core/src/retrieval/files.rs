//! JSONL formats for per-modality embeddings and persisted indexes.
//!
//! Embedding file:
//!
//! ```text
//! {"dim": 768, "encoder": "clip-vit-l-14-336"}
//! {"id": "m1", "image_vec": [...], "text_vec": [...]}
//! ```
//!
//! Index file (self-describing, carries the weights it was fused with):
//!
//! ```text
//! {"kind": "index", "dim": 768, "encoder": "...", "lambda_v": 0.8, "lambda_t": 0.2}
//! {"id": "r1", "fused_vec": [...]}
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingRecord, FusionWeights, RetrievalError, SimilarityIndex};

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingHeader {
    dim: usize,
    encoder: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    kind: String,
    dim: usize,
    encoder: String,
    lambda_v: f64,
    lambda_t: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexLine {
    id: String,
    fused_vec: Vec<f32>,
}

/// Embedding records keyed by meme id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub encoder: String,
    records: Vec<EmbeddingRecord>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, encoder: impl Into<String>) -> Self {
        EmbeddingSet { dim, encoder: encoder.into(), records: Vec::new(), by_id: HashMap::new() }
    }

    pub fn insert(&mut self, rec: EmbeddingRecord) -> Result<(), RetrievalError> {
        rec.check(self.dim)?;
        if self.by_id.contains_key(&rec.meme_id) {
            return Err(RetrievalError::File {
                line: self.records.len() + 2,
                detail: format!("duplicate id {:?}", rec.meme_id),
            });
        }
        self.by_id.insert(rec.meme_id.clone(), self.records.len());
        self.records.push(rec);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn line_err(line: usize, detail: impl Into<String>) -> RetrievalError {
    RetrievalError::File { line, detail: detail.into() }
}

/// Non-blank lines with their 1-based line numbers.
fn content_lines(input: &str) -> impl Iterator<Item = (usize, &str)> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
}

pub fn parse_embeddings(input: &str) -> Result<EmbeddingSet, RetrievalError> {
    let mut lines = content_lines(input);
    let (hl, header) = lines.next().ok_or_else(|| line_err(1, "missing header line"))?;
    let header: EmbeddingHeader =
        serde_json::from_str(header).map_err(|e| line_err(hl, format!("bad header: {e}")))?;
    if header.dim == 0 {
        return Err(line_err(hl, "header dim must be positive"));
    }
    let mut set = EmbeddingSet::new(header.dim, header.encoder);
    for (n, line) in lines {
        let rec: EmbeddingRecord =
            serde_json::from_str(line).map_err(|e| line_err(n, e.to_string()))?;
        for (name, v) in [("image_vec", &rec.image_vec), ("text_vec", &rec.text_vec)] {
            if v.len() != set.dim {
                return Err(line_err(
                    n,
                    format!("{}: {name} has length {}, header dim is {}", rec.meme_id, v.len(), set.dim),
                ));
            }
        }
        if set.get(&rec.meme_id).is_some() {
            return Err(line_err(n, format!("duplicate id {:?}", rec.meme_id)));
        }
        set.insert(rec).map_err(|e| line_err(n, e.to_string()))?;
    }
    Ok(set)
}

pub fn render_embeddings(set: &EmbeddingSet) -> String {
    let header = EmbeddingHeader { dim: set.dim, encoder: set.encoder.clone() };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for rec in &set.records {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_index(input: &str) -> Result<SimilarityIndex, RetrievalError> {
    let mut lines = content_lines(input);
    let (hl, header) = lines.next().ok_or_else(|| line_err(1, "missing header line"))?;
    let header: IndexHeader =
        serde_json::from_str(header).map_err(|e| line_err(hl, format!("bad header: {e}")))?;
    if header.kind != "index" {
        return Err(line_err(hl, format!("expected kind \"index\", found {:?}", header.kind)));
    }
    let weights = FusionWeights::new(header.lambda_v, header.lambda_t)
        .map_err(|e| line_err(hl, e.to_string()))?;
    let mut entries = Vec::new();
    let mut seen = HashMap::new();
    for (n, line) in lines {
        let entry: IndexLine = serde_json::from_str(line).map_err(|e| line_err(n, e.to_string()))?;
        if entry.fused_vec.len() != header.dim {
            return Err(line_err(
                n,
                format!("{}: fused_vec has length {}, header dim is {}", entry.id, entry.fused_vec.len(), header.dim),
            ));
        }
        if entry.fused_vec.iter().any(|x| !x.is_finite()) {
            return Err(line_err(n, format!("{}: non-finite component", entry.id)));
        }
        if seen.insert(entry.id.clone(), n).is_some() {
            return Err(line_err(n, format!("duplicate id {:?}", entry.id)));
        }
        entries.push((entry.id, entry.fused_vec));
    }
    SimilarityIndex::from_fused(entries, weights, header.dim, header.encoder)
}

pub fn render_index(index: &SimilarityIndex) -> String {
    let w = index.weights();
    let header = IndexHeader {
        kind: "index".into(),
        dim: index.dim(),
        encoder: index.encoder().to_owned(),
        lambda_v: w.lambda_v,
        lambda_t: w.lambda_t,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for e in index.entries() {
        let line = IndexLine { id: e.meme_id.clone(), fused_vec: e.fused.clone() };
        out.push_str(&serde_json::to_string(&line).expect("entry serializes"));
        out.push('\n');
    }
    out
}

fn read(path: &Path) -> Result<String, RetrievalError> {
    std::fs::read_to_string(path)
        .map_err(|e| RetrievalError::Io { path: path.display().to_string(), detail: e.to_string() })
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet, RetrievalError> {
    parse_embeddings(&read(path)?)
}

pub fn load_index(path: &Path) -> Result<SimilarityIndex, RetrievalError> {
    parse_index(&read(path)?)
}
