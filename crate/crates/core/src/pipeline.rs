//! Per-sample orchestration for the full method and its ablations.
//!
//! | mode        | similar memes     | derivation   | decision                         |
//! |-------------|-------------------|--------------|----------------------------------|
//! | `full`      | top-K retrieval   | fwd + back   | two debaters, judge on conflict  |
//! | `no_ssr`    | K random refs     | fwd + back   | two debaters, judge on conflict  |
//! | `no_rid`    | top-K retrieval   | none         | one call, note = similar texts   |
//! | `fwd_only`  | top-K retrieval   | fwd          | forward debater alone            |
//! | `back_only` | top-K retrieval   | back         | backward debater alone           |
//! | `no_iai`    | top-K retrieval   | fwd + back   | one call, note = fwd ++ back     |
//! | `baseline`  | none              | none         | one chain-of-thought call        |
//!
//! Stage failures never abort a run; they are recorded in the transcript
//! and the sample carries no final judgment.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{AgentRole, BackendError, CallRecord, LmmClient};
use crate::debate::{
    arbitrate, ask_for_judgment, debate, debater_turn, render_debater_prompt, DebateError, Judgment,
    JudgmentSource,
};
use crate::insight::{derive_pass, DeriveError, Direction, InsightSet};
use crate::model::Meme;
use crate::prompts::{bullet_list, PromptSet, MEME_TEXT};
use crate::retrieval::{retrieve_similar, EmbeddingSet, Neighbors, SimilarityIndex};
use crate::backend::ChatMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    NoSsr,
    NoRid,
    FwdOnly,
    BackOnly,
    NoIai,
    Baseline,
}

impl Mode {
    pub const ALL: [Mode; 7] =
        [Mode::Full, Mode::NoSsr, Mode::NoRid, Mode::FwdOnly, Mode::BackOnly, Mode::NoIai, Mode::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoSsr => "no_ssr",
            Mode::NoRid => "no_rid",
            Mode::FwdOnly => "fwd_only",
            Mode::BackOnly => "back_only",
            Mode::NoIai => "no_iai",
            Mode::Baseline => "baseline",
        }
    }

    /// Modes that rank references by embedding similarity.
    pub fn needs_index(self) -> bool {
        !matches!(self, Mode::NoSsr | Mode::Baseline)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected one of full, no_ssr, no_rid, fwd_only, back_only, no_iai, baseline)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieval,
    DerivingFwd,
    DerivingBack,
    DebaterFwd,
    DebaterBack,
    Judge,
    Reasoning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleError {
    pub stage: Stage,
    /// Coarse class: `transport`, `timeout`, `bad_status`, `empty_response`,
    /// `unparseable`, `retrieval`, or `other`.
    pub kind: String,
    pub message: String,
}

impl SampleError {
    fn retrieval(message: impl Into<String>) -> Self {
        SampleError { stage: Stage::Retrieval, kind: "retrieval".into(), message: message.into() }
    }

    fn backend(stage: Stage, e: &BackendError, message: String) -> Self {
        let kind = match e {
            BackendError::Timeout => "timeout",
            BackendError::Transport(_) => "transport",
            BackendError::BadStatus(_) => "bad_status",
            BackendError::EmptyResponse => "empty_response",
            _ => "other",
        };
        SampleError { stage, kind: kind.into(), message }
    }

    fn derive(stage: Stage, e: DeriveError) -> Self {
        match &e {
            DeriveError::Backend { source, .. } => Self::backend(stage, source, e.to_string()),
            _ => SampleError { stage, kind: "other".into(), message: e.to_string() },
        }
    }

    fn debate(stage: Stage, e: DebateError) -> Self {
        match &e {
            DebateError::Backend { source, .. } => Self::backend(stage, source, e.to_string()),
            DebateError::JudgmentUnparseable { .. } => {
                SampleError { stage, kind: "unparseable".into(), message: e.to_string() }
            }
        }
    }

    /// Failures that indicate the backend could not be reached at all.
    pub fn is_connectivity(&self) -> bool {
        self.kind == "transport" || self.kind == "timeout"
    }
}

/// Audit trail for one target meme. Field names are part of the report
/// format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTranscript {
    pub target_id: String,
    pub mode: Mode,
    pub k: usize,
    /// Ids of the memes fed to derivation or to the note, in presentation order.
    pub similar: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbors: Option<Neighbors>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insights_fwd: Option<InsightSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insights_back: Option<InsightSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgment_fwd: Option<Judgment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgment_back: Option<Judgment>,
    #[serde(rename = "final")]
    pub verdict: Option<Judgment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<SampleError>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub calls: Vec<CallRecord>,
}

impl SampleTranscript {
    fn new(target: &Meme, mode: Mode, k: usize) -> Self {
        SampleTranscript {
            target_id: target.id.clone(),
            mode,
            k,
            similar: Vec::new(),
            neighbors: None,
            sample_seed: None,
            insights_fwd: None,
            insights_back: None,
            judgment_fwd: None,
            judgment_back: None,
            verdict: None,
            errors: Vec::new(),
            notes: Vec::new(),
            calls: Vec::new(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.verdict.is_none()
    }

    pub fn calls_for(&self, role: AgentRole) -> usize {
        self.calls.iter().filter(|c| c.agent_role == role).count()
    }

    fn push_calls(&mut self, calls: Vec<CallRecord>) {
        self.calls.extend(calls);
    }

    fn finish(mut self) -> Self {
        for (i, call) in self.calls.iter_mut().enumerate() {
            call.sequence_no = i as u32 + 1;
        }
        self
    }
}

/// Everything a sample needs; shared read-only across concurrent samples.
pub struct PipelineContext {
    pub client: LmmClient,
    pub prompts: PromptSet,
    /// Reference memes in manifest order.
    pub references: Vec<Meme>,
    pub index: Option<SimilarityIndex>,
    pub embeddings: Option<EmbeddingSet>,
    pub k: usize,
    pub seed: u64,
}

impl PipelineContext {
    fn reference(&self, id: &str) -> Option<&Meme> {
        self.references.iter().find(|m| m.id == id)
    }
}

/// Per-target seed for random reference selection; independent of sample
/// scheduling order.
pub fn sample_seed(seed: u64, target_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(target_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest has 32 bytes"))
}

/// K distinct reference memes drawn uniformly without replacement.
pub fn random_references<'a>(
    references: &'a [Meme],
    target_id: &str,
    k: usize,
    seed: u64,
) -> Result<Vec<&'a Meme>, String> {
    let pool: Vec<&Meme> = references.iter().filter(|m| m.id != target_id).collect();
    if k > pool.len() {
        return Err(format!("k = {k} exceeds the {} eligible reference memes", pool.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
}

fn select_similar(ctx: &PipelineContext, target: &Meme, mode: Mode, t: &mut SampleTranscript) -> Result<Vec<Meme>, SampleError> {
    if mode == Mode::NoSsr {
        let seed = sample_seed(ctx.seed, &target.id);
        t.sample_seed = Some(seed);
        let picked = random_references(&ctx.references, &target.id, ctx.k, seed).map_err(SampleError::retrieval)?;
        return Ok(picked.into_iter().cloned().collect());
    }
    let index = ctx.index.as_ref().ok_or_else(|| SampleError::retrieval("no similarity index loaded"))?;
    let record = ctx
        .embeddings
        .as_ref()
        .and_then(|e| e.get(&target.id))
        .ok_or_else(|| SampleError::retrieval(format!("no embedding for target {}", target.id)))?;
    let neighbors = retrieve_similar(index, record, ctx.k).map_err(|e| SampleError::retrieval(e.to_string()))?;
    let memes = neighbors
        .items
        .iter()
        .map(|n| {
            ctx.reference(&n.id)
                .cloned()
                .ok_or_else(|| SampleError::retrieval(format!("index entry {} is not a reference meme", n.id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    t.neighbors = Some(neighbors);
    Ok(memes)
}

async fn single_call(
    ctx: &PipelineContext,
    messages: Vec<ChatMessage>,
    t: &mut SampleTranscript,
) {
    let mut calls = Vec::new();
    match ask_for_judgment(&ctx.client, AgentRole::Baseline, messages, &mut calls).await {
        Ok((decision, thought)) => {
            t.verdict = Some(Judgment { decision, thought, source: JudgmentSource::Single })
        }
        Err(e) => t.errors.push(SampleError::debate(Stage::Reasoning, e)),
    }
    t.push_calls(calls);
}

pub async fn infer_sample(ctx: &PipelineContext, target: &Meme, mode: Mode) -> SampleTranscript {
    let mut t = SampleTranscript::new(target, mode, if mode == Mode::Baseline { 0 } else { ctx.k });
    if target.text.is_empty() {
        t.notes.push("target meme has empty text; passed through unchanged".into());
    }

    if mode == Mode::Baseline {
        let text = ctx.prompts.baseline.0.render(&[(MEME_TEXT, &target.text)]);
        let messages = vec![ChatMessage::user(text).with_image(target.image_ref.clone())];
        single_call(ctx, messages, &mut t).await;
        return t.finish();
    }

    let similar = match select_similar(ctx, target, mode, &mut t) {
        Ok(s) => s,
        Err(e) => {
            t.errors.push(e);
            return t.finish();
        }
    };
    t.similar = similar.iter().map(|m| m.id.clone()).collect();
    if similar.is_empty() {
        t.errors.push(SampleError::retrieval("k = 0 leaves nothing to derive insights from"));
        return t.finish();
    }

    if mode == Mode::NoRid {
        let texts: Vec<&str> = similar.iter().map(|m| m.text.as_str()).collect();
        let messages = render_debater_prompt(&ctx.prompts.debater, target, &bullet_list(&texts));
        single_call(ctx, messages, &mut t).await;
        return t.finish();
    }

    let run_fwd = matches!(mode, Mode::Full | Mode::NoSsr | Mode::FwdOnly | Mode::NoIai);
    let run_back = matches!(mode, Mode::Full | Mode::NoSsr | Mode::BackOnly | Mode::NoIai);
    let tpl = &ctx.prompts.deriving;
    let (mut fwd_calls, mut back_calls) = (Vec::new(), Vec::new());
    let (fwd, back) = tokio::join!(
        async {
            if run_fwd {
                Some(derive_pass(&ctx.client, tpl, &similar, Direction::Forward, &mut fwd_calls).await)
            } else {
                None
            }
        },
        async {
            if run_back {
                Some(derive_pass(&ctx.client, tpl, &similar, Direction::Backward, &mut back_calls).await)
            } else {
                None
            }
        },
    );
    t.push_calls(fwd_calls);
    t.push_calls(back_calls);
    let mut derivation_failed = false;
    for (result, stage, slot) in [
        (fwd, Stage::DerivingFwd, &mut t.insights_fwd),
        (back, Stage::DerivingBack, &mut t.insights_back),
    ] {
        match result {
            Some(Ok(set)) => *slot = Some(set),
            Some(Err(e)) => {
                t.errors.push(SampleError::derive(stage, e));
                derivation_failed = true;
            }
            None => {}
        }
    }
    if derivation_failed {
        return t.finish();
    }

    match mode {
        Mode::FwdOnly | Mode::BackOnly => {
            let (insights, source, stage) = if mode == Mode::FwdOnly {
                (t.insights_fwd.clone(), JudgmentSource::DebaterFwd, Stage::DebaterFwd)
            } else {
                (t.insights_back.clone(), JudgmentSource::DebaterBack, Stage::DebaterBack)
            };
            let insights = insights.expect("pass ran");
            let mut calls = Vec::new();
            match debater_turn(&ctx.client, &ctx.prompts.debater, target, &insights, source, &mut calls).await {
                Ok(j) => {
                    if mode == Mode::FwdOnly {
                        t.judgment_fwd = Some(j.clone());
                    } else {
                        t.judgment_back = Some(j.clone());
                    }
                    t.verdict = Some(j);
                }
                Err(e) => t.errors.push(SampleError::debate(stage, e)),
            }
            t.push_calls(calls);
        }
        Mode::NoIai => {
            let fwd = t.insights_fwd.as_ref().expect("pass ran");
            let back = t.insights_back.as_ref().expect("pass ran");
            let combined: Vec<&str> = fwd.items.iter().chain(&back.items).map(String::as_str).collect();
            let messages = render_debater_prompt(&ctx.prompts.debater, target, &bullet_list(&combined));
            single_call(ctx, messages, &mut t).await;
        }
        Mode::Full | Mode::NoSsr => {
            let fwd = t.insights_fwd.clone().expect("pass ran");
            let back = t.insights_back.clone().expect("pass ran");
            let outcome = debate(&ctx.client, &ctx.prompts.debater, target, &fwd, &back).await;
            t.push_calls(outcome.forward_calls);
            t.push_calls(outcome.backward_calls);
            match &outcome.forward {
                Ok(j) => t.judgment_fwd = Some(j.clone()),
                Err(e) => t.errors.push(SampleError::debate(Stage::DebaterFwd, e.clone())),
            }
            match &outcome.backward {
                Ok(j) => t.judgment_back = Some(j.clone()),
                Err(e) => t.errors.push(SampleError::debate(Stage::DebaterBack, e.clone())),
            }
            if let (Ok(jf), Ok(jb)) = (&outcome.forward, &outcome.backward) {
                let mut calls = Vec::new();
                match arbitrate(&ctx.client, &ctx.prompts.judge, target, jf, jb, &mut calls).await {
                    Ok(j) => t.verdict = Some(j),
                    Err(e) => t.errors.push(SampleError::debate(Stage::Judge, e)),
                }
                t.push_calls(calls);
            }
        }
        Mode::NoRid | Mode::Baseline => unreachable!("handled above"),
    }
    t.finish()
}

/// Logical calls per agent role, summed over transcripts.
pub fn call_totals<'a>(transcripts: impl IntoIterator<Item = &'a SampleTranscript>) -> HashMap<AgentRole, usize> {
    let mut totals = HashMap::new();
    for t in transcripts {
        for c in &t.calls {
            *totals.entry(c.agent_role).or_insert(0) += 1;
        }
    }
    totals
}
