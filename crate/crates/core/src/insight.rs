//! Insight derivation over the retrieved memes.
//!
//! A pass walks the similar memes one at a time (forward: retrieval order,
//! backward: reversed). Each step shows the deriving agent one meme plus the
//! insight set produced by the previous step, and the parsed reply becomes
//! the new set. The first step starts from an empty set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AgentRole, BackendError, CallRecord, ChatMessage, LmmClient};
use crate::model::Meme;
use crate::prompts::{bullet_list, DerivingPromptTemplate, MEME_TEXT, PRIOR_INSIGHTS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeriveError {
    #[error("deriving agent returned nothing")]
    EmptyDerivation,
    #[error("no similar memes to derive from")]
    NoSimilarMemes,
    #[error("step {step}: {source}")]
    Backend { step: usize, source: BackendError },
    #[error("step {step}: empty derivation")]
    EmptyAtStep { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn role(self) -> AgentRole {
        match self {
            Direction::Forward => AgentRole::DerivingFwd,
            Direction::Backward => AgentRole::DerivingBack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsightSet {
    pub items: Vec<String>,
    pub direction: Direction,
    /// Number of derivation steps folded into this set.
    pub step: usize,
}

impl InsightSet {
    pub fn empty(direction: Direction) -> Self {
        InsightSet { items: Vec::new(), direction, step: 0 }
    }

    pub fn render(&self) -> String {
        bullet_list(&self.items)
    }
}

pub fn render_deriving_prompt(
    tpl: &DerivingPromptTemplate,
    meme: &Meme,
    prior: &InsightSet,
) -> Vec<ChatMessage> {
    let text = tpl.template.render(&[(MEME_TEXT, &meme.text), (PRIOR_INSIGHTS, &prior.render())]);
    vec![ChatMessage::user(text).with_image(meme.image_ref.clone())]
}

/// Strips a list marker (`-`, `*`, `12.`) from the start of a line.
fn strip_marker(line: &str) -> Option<&str> {
    let mut chars = line.chars();
    match chars.next()? {
        c @ ('-' | '*') => {
            let rest = chars.as_str();
            // `---` and `**bold**` are not list items.
            (!rest.starts_with(c)).then_some(rest)
        }
        c if c.is_ascii_digit() => {
            let digits = line.bytes().take_while(u8::is_ascii_digit).count();
            line[digits..].strip_prefix('.')
        }
        _ => None,
    }
}

/// Bulleted or numbered lines of a reply, trimmed and capped at
/// `max_insights`. A reply without any list lines becomes one item.
pub fn parse_insights(response: &str, max_insights: usize) -> Result<Vec<String>, DeriveError> {
    let trimmed = response.trim();
    if trimmed.is_empty() {
        return Err(DeriveError::EmptyDerivation);
    }
    let items: Vec<String> = trimmed
        .lines()
        .filter_map(|l| strip_marker(l.trim_start()))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .take(max_insights)
        .map(str::to_owned)
        .collect();
    if items.is_empty() {
        return Ok(vec![trimmed.to_owned()]);
    }
    Ok(items)
}

/// Runs one derivation chain. Every call made is appended to `calls`, also
/// when the pass fails part-way.
pub async fn derive_pass(
    client: &LmmClient,
    tpl: &DerivingPromptTemplate,
    similar: &[Meme],
    direction: Direction,
    calls: &mut Vec<CallRecord>,
) -> Result<InsightSet, DeriveError> {
    if similar.is_empty() {
        return Err(DeriveError::NoSimilarMemes);
    }
    let order: Vec<&Meme> = match direction {
        Direction::Forward => similar.iter().collect(),
        Direction::Backward => similar.iter().rev().collect(),
    };
    let mut current = InsightSet::empty(direction);
    for (i, meme) in order.into_iter().enumerate() {
        let step = i + 1;
        let messages = render_deriving_prompt(tpl, meme, &current);
        let record = client
            .call(direction.role(), &messages)
            .await
            .map_err(|source| DeriveError::Backend { step, source })?;
        let parsed = parse_insights(&record.response_text, tpl.max_insights)
            .map_err(|_| DeriveError::EmptyAtStep { step });
        calls.push(record);
        current = InsightSet { items: parsed?, direction, step };
    }
    Ok(current)
}
