//! Similar sample retrieval.
//!
//! Each meme carries one image vector and one text vector. Both are
//! L2-normalized and mixed with fixed weights into a single fused vector;
//! reference memes are then ranked against a target by cosine similarity
//! and the top K are kept.
//!
//! Scoring is exact and exhaustive. Arithmetic runs in `f64` even though
//! vectors are stored as `f32`, and equal scores are ordered by manifest
//! position, so a query is fully reproducible.

mod files;

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::DatasetManifest;

pub use files::{
    load_embeddings, load_index, parse_embeddings, parse_index, render_embeddings, render_index,
    EmbeddingSet,
};

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("meme {meme_id}: {modality} vector has zero norm")]
    ZeroNormModality { meme_id: String, modality: Modality },
    #[error("meme {0}: fused vector has zero norm")]
    ZeroNormFused(String),
    #[error("zero-norm vector")]
    ZeroNormVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("meme {0}: vector contains NaN or infinite components")]
    NonFinite(String),
    #[error("no embedding for reference meme {0}")]
    MissingEmbedding(String),
    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("k = {k} exceeds the {available} eligible reference memes")]
    KTooLarge { k: usize, available: usize },
    #[error("invalid fusion weights ({lambda_v}, {lambda_t})")]
    BadWeights { lambda_v: f64, lambda_t: f64 },
    #[error("line {line}: {detail}")]
    File { line: usize, detail: String },
    #[error("reading {path}: {detail}")]
    Io { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Image => "image",
            Modality::Text => "text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    #[serde(rename = "id")]
    pub meme_id: String,
    pub image_vec: Vec<f32>,
    pub text_vec: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn dim(&self) -> usize {
        self.image_vec.len()
    }

    pub fn check(&self, dim: usize) -> Result<(), RetrievalError> {
        for v in [&self.image_vec, &self.text_vec] {
            if v.len() != dim {
                return Err(RetrievalError::DimensionMismatch { left: dim, right: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(RetrievalError::NonFinite(self.meme_id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub lambda_v: f64,
    pub lambda_t: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights { lambda_v: 0.8, lambda_t: 0.2 }
    }
}

impl FusionWeights {
    pub fn new(lambda_v: f64, lambda_t: f64) -> Result<Self, RetrievalError> {
        let ok = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !ok(lambda_v) || !ok(lambda_t) || (lambda_v == 0.0 && lambda_t == 0.0) {
            return Err(RetrievalError::BadWeights { lambda_v, lambda_t });
        }
        Ok(FusionWeights { lambda_v, lambda_t })
    }
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// `lambda_v * v/|v| + lambda_t * t/|t|`, componentwise.
pub fn fuse_embedding(rec: &EmbeddingRecord, w: FusionWeights) -> Result<Vec<f32>, RetrievalError> {
    if rec.image_vec.len() != rec.text_vec.len() {
        return Err(RetrievalError::DimensionMismatch {
            left: rec.image_vec.len(),
            right: rec.text_vec.len(),
        });
    }
    let image_norm = l2_norm(&rec.image_vec);
    let text_norm = l2_norm(&rec.text_vec);
    for (norm, modality) in [(image_norm, Modality::Image), (text_norm, Modality::Text)] {
        if !norm.is_finite() {
            return Err(RetrievalError::NonFinite(rec.meme_id.clone()));
        }
        if norm == 0.0 {
            return Err(RetrievalError::ZeroNormModality { meme_id: rec.meme_id.clone(), modality });
        }
    }
    Ok(rec
        .image_vec
        .iter()
        .zip(&rec.text_vec)
        .map(|(&v, &t)| {
            (w.lambda_v * f64::from(v) / image_norm + w.lambda_t * f64::from(t) / text_norm) as f32
        })
        .collect())
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

fn cosine_with_norms(a: &[f32], norm_a: f64, b: &[f32], norm_b: f64) -> f64 {
    (dot(a, b) / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(RetrievalError::ZeroNormVector);
    }
    Ok(cosine_with_norms(a, na, b, nb))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub meme_id: String,
    pub fused: Vec<f32>,
    norm: f64,
}

impl IndexEntry {
    fn new(meme_id: String, fused: Vec<f32>) -> Result<Self, RetrievalError> {
        let norm = l2_norm(&fused);
        if norm == 0.0 || !norm.is_finite() {
            return Err(RetrievalError::ZeroNormFused(meme_id));
        }
        Ok(IndexEntry { meme_id, fused, norm })
    }
}

/// Fused reference vectors in manifest order. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityIndex {
    entries: Vec<IndexEntry>,
    weights: FusionWeights,
    dim: usize,
    encoder: String,
}

impl SimilarityIndex {
    pub fn from_fused(
        entries: Vec<(String, Vec<f32>)>,
        weights: FusionWeights,
        dim: usize,
        encoder: impl Into<String>,
    ) -> Result<Self, RetrievalError> {
        if entries.is_empty() {
            return Err(RetrievalError::EmptyReferenceSet);
        }
        let entries = entries
            .into_iter()
            .map(|(id, v)| {
                if v.len() != dim {
                    return Err(RetrievalError::DimensionMismatch { left: dim, right: v.len() });
                }
                IndexEntry::new(id, v)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SimilarityIndex { entries, weights, dim, encoder: encoder.into() })
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weights(&self) -> FusionWeights {
        self.weights
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encoder(&self) -> &str {
        &self.encoder
    }

    fn contains(&self, id: &str) -> bool {
        self.entries.iter().any(|e| e.meme_id == id)
    }

    fn fused_target(&self, target: &EmbeddingRecord) -> Result<(Vec<f32>, f64), RetrievalError> {
        if target.dim() != self.dim {
            return Err(RetrievalError::DimensionMismatch { left: self.dim, right: target.dim() });
        }
        let fused = fuse_embedding(target, self.weights)?;
        let norm = l2_norm(&fused);
        if norm == 0.0 {
            return Err(RetrievalError::ZeroNormFused(target.meme_id.clone()));
        }
        Ok((fused, norm))
    }

    fn eligible(&self, target_id: &str, k: usize) -> Result<(), RetrievalError> {
        let available = self.entries.len() - usize::from(self.contains(target_id));
        if k > available {
            return Err(RetrievalError::KTooLarge { k, available });
        }
        Ok(())
    }
}

pub fn build_index(
    manifest: &DatasetManifest,
    embeddings: &EmbeddingSet,
    w: FusionWeights,
) -> Result<SimilarityIndex, RetrievalError> {
    let mut fused = Vec::new();
    for meme in manifest.references() {
        let rec = embeddings
            .get(&meme.id)
            .ok_or_else(|| RetrievalError::MissingEmbedding(meme.id.clone()))?;
        fused.push((meme.id.clone(), fuse_embedding(rec, w)?));
    }
    SimilarityIndex::from_fused(fused, w, embeddings.dim, embeddings.encoder.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbors {
    pub target_id: String,
    pub items: Vec<Neighbor>,
}

impl Neighbors {
    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|n| n.id.as_str()).collect()
    }
}

/// Heap key: greater means a better match (higher score, then earlier position).
#[derive(Debug, Clone, Copy)]
struct Ranked {
    score: f64,
    pos: usize,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.pos.cmp(&self.pos))
    }
}

/// Top-k references by cosine similarity to `target`, best first.
///
/// Keeps a bounded min-heap of the k best candidates seen so far. A
/// reference whose id equals the target's is skipped.
pub fn retrieve_similar(
    index: &SimilarityIndex,
    target: &EmbeddingRecord,
    k: usize,
) -> Result<Neighbors, RetrievalError> {
    index.eligible(&target.meme_id, k)?;
    let (fused, norm) = index.fused_target(target)?;
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    if k > 0 {
        for (pos, entry) in index.entries.iter().enumerate() {
            if entry.meme_id == target.meme_id {
                continue;
            }
            let cand = Ranked { score: cosine_with_norms(&fused, norm, &entry.fused, entry.norm), pos };
            if heap.len() < k {
                heap.push(Reverse(cand));
            } else if heap.peek().is_some_and(|Reverse(worst)| cand > *worst) {
                heap.pop();
                heap.push(Reverse(cand));
            }
        }
    }
    let items = heap
        .into_sorted_vec()
        .into_iter()
        .map(|Reverse(r)| Neighbor { id: index.entries[r.pos].meme_id.clone(), score: r.score })
        .collect();
    Ok(Neighbors { target_id: target.meme_id.clone(), items })
}

/// Scores every reference, stable-sorts descending, and takes k. Kept as the
/// reference answer for [`retrieve_similar`].
pub fn brute_force_topk(
    index: &SimilarityIndex,
    target: &EmbeddingRecord,
    k: usize,
) -> Result<Neighbors, RetrievalError> {
    index.eligible(&target.meme_id, k)?;
    let fused = fuse_embedding(target, index.weights)?;
    let mut scored = Vec::with_capacity(index.entries.len());
    for entry in index.entries.iter().filter(|e| e.meme_id != target.meme_id) {
        scored.push((entry.meme_id.clone(), cosine_similarity(&fused, &entry.fused)?));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(k);
    Ok(Neighbors {
        target_id: target.meme_id.clone(),
        items: scored.into_iter().map(|(id, score)| Neighbor { id, score }).collect(),
    })
}
