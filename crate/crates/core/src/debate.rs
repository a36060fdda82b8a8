//! Insight-augmented inference: two debaters and a judge.
//!
//! The forward debater sees the forward insight set, the backward debater
//! the backward one. Matching decisions are adopted as-is; otherwise a
//! judge reads both arguments and decides. Replies must end in an
//! `Answer: harmful|harmless` line; an unparseable reply gets exactly one
//! follow-up turn reminding the agent of the format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AgentRole, BackendError, CallRecord, ChatMessage, LmmClient};
use crate::insight::InsightSet;
use crate::model::{BinaryLabel, Meme};
use crate::prompts::{
    bullet_list, DebaterPromptTemplate, JudgePromptTemplate, D1_ANSWER, D1_REASON, D2_ANSWER,
    D2_REASON, FORMAT_REMINDER, MEME_TEXT, NOTE,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JudgmentParseError {
    #[error("no `Answer:` line")]
    NoAnswerLine,
    #[error("answer {0:?} is neither harmful nor harmless")]
    AmbiguousAnswer(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DebateError {
    #[error("{agent}: {source}")]
    Backend { agent: AgentRole, source: BackendError },
    #[error("{agent}: unparseable judgment after format retry ({detail})")]
    JudgmentUnparseable { agent: AgentRole, detail: JudgmentParseError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgmentSource {
    DebaterFwd,
    DebaterBack,
    Judge,
    Consensus,
    /// The only reasoning call of a single-call mode.
    Single,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub decision: BinaryLabel,
    pub thought: String,
    pub source: JudgmentSource,
}

fn find_ascii_ci(haystack: &str, needle: &str) -> Option<usize> {
    haystack.to_ascii_lowercase().rfind(needle)
}

fn strip_emphasis(s: &str) -> &str {
    s.trim_matches(|c: char| c == '*' || c == '#' || c.is_whitespace())
}

/// Reads the decision from the last `Answer:` (any case) and the reasoning
/// from the `Thought:` section before it, or from everything before the
/// answer when there is no such section.
pub fn parse_judgment(response: &str) -> Result<(BinaryLabel, String), JudgmentParseError> {
    const ANSWER: &str = "answer:";
    const THOUGHT: &str = "thought:";
    let pos = find_ascii_ci(response, ANSWER).ok_or(JudgmentParseError::NoAnswerLine)?;
    let after = &response[pos + ANSWER.len()..];
    let line = after.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let token = line
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    let decision = match token.as_str() {
        "harmful" => BinaryLabel::Harmful,
        "harmless" => BinaryLabel::Harmless,
        "" => return Err(JudgmentParseError::NoAnswerLine),
        _ => return Err(JudgmentParseError::AmbiguousAnswer(line.to_owned())),
    };
    let before = &response[..pos];
    let thought = match find_ascii_ci(before, THOUGHT) {
        Some(t) => strip_emphasis(&before[t + THOUGHT.len()..]),
        None => strip_emphasis(before),
    };
    let thought = if thought.is_empty() { response.trim() } else { thought };
    Ok((decision, thought.to_owned()))
}

pub fn render_debater_prompt(tpl: &DebaterPromptTemplate, target: &Meme, note: &str) -> Vec<ChatMessage> {
    let text = tpl.0.render(&[(MEME_TEXT, &target.text), (NOTE, note)]);
    vec![ChatMessage::user(text).with_image(target.image_ref.clone())]
}

pub fn render_judge_prompt(
    tpl: &JudgePromptTemplate,
    target: &Meme,
    debater_1: &Judgment,
    debater_2: &Judgment,
) -> Vec<ChatMessage> {
    let text = tpl.0.render(&[
        (MEME_TEXT, &target.text),
        (D1_ANSWER, debater_1.decision.as_str()),
        (D1_REASON, &debater_1.thought),
        (D2_ANSWER, debater_2.decision.as_str()),
        (D2_REASON, &debater_2.thought),
    ]);
    vec![ChatMessage::user(text).with_image(target.image_ref.clone())]
}

/// One verdict-producing call with at most one format retry. All calls go
/// to `calls`, including the failed attempt.
pub async fn ask_for_judgment(
    client: &LmmClient,
    agent: AgentRole,
    messages: Vec<ChatMessage>,
    calls: &mut Vec<CallRecord>,
) -> Result<(BinaryLabel, String), DebateError> {
    let backend = |source| DebateError::Backend { agent, source };
    let first = client.call(agent, &messages).await.map_err(backend)?;
    let reply = first.response_text.clone();
    calls.push(first);
    if let Ok(parsed) = parse_judgment(&reply) {
        return Ok(parsed);
    }
    let mut retry_messages = messages;
    retry_messages.push(ChatMessage::assistant(reply));
    retry_messages.push(ChatMessage::user(FORMAT_REMINDER));
    let mut second = client.call(agent, &retry_messages).await.map_err(backend)?;
    second.format_retry = true;
    let outcome = parse_judgment(&second.response_text)
        .map_err(|detail| DebateError::JudgmentUnparseable { agent, detail });
    calls.push(second);
    outcome
}

pub struct DebateOutcome {
    pub forward: Result<Judgment, DebateError>,
    pub backward: Result<Judgment, DebateError>,
    pub forward_calls: Vec<CallRecord>,
    pub backward_calls: Vec<CallRecord>,
}

pub async fn debater_turn(
    client: &LmmClient,
    tpl: &DebaterPromptTemplate,
    target: &Meme,
    insights: &InsightSet,
    source: JudgmentSource,
    calls: &mut Vec<CallRecord>,
) -> Result<Judgment, DebateError> {
    let agent = match source {
        JudgmentSource::DebaterBack => AgentRole::DebaterBack,
        _ => AgentRole::DebaterFwd,
    };
    let messages = render_debater_prompt(tpl, target, &bullet_list(&insights.items));
    let (decision, thought) = ask_for_judgment(client, agent, messages, calls).await?;
    Ok(Judgment { decision, thought, source })
}

/// Both debaters, concurrently. Their calls are kept apart so the
/// transcript can list them in a fixed order.
pub async fn debate(
    client: &LmmClient,
    tpl: &DebaterPromptTemplate,
    target: &Meme,
    forward: &InsightSet,
    backward: &InsightSet,
) -> DebateOutcome {
    let mut forward_calls = Vec::new();
    let mut backward_calls = Vec::new();
    let (forward, backward) = tokio::join!(
        debater_turn(client, tpl, target, forward, JudgmentSource::DebaterFwd, &mut forward_calls),
        debater_turn(client, tpl, target, backward, JudgmentSource::DebaterBack, &mut backward_calls),
    );
    DebateOutcome { forward, backward, forward_calls, backward_calls }
}

/// Adopts a shared decision without a call, otherwise asks the judge with
/// the forward debater as "Debater 1".
pub async fn arbitrate(
    client: &LmmClient,
    tpl: &JudgePromptTemplate,
    target: &Meme,
    forward: &Judgment,
    backward: &Judgment,
    calls: &mut Vec<CallRecord>,
) -> Result<Judgment, DebateError> {
    if forward.decision == backward.decision {
        return Ok(Judgment {
            decision: forward.decision,
            thought: format!("{}\n\n{}", forward.thought, backward.thought),
            source: JudgmentSource::Consensus,
        });
    }
    let messages = render_judge_prompt(tpl, target, forward, backward);
    let (decision, thought) = ask_for_judgment(client, AgentRole::Judge, messages, calls).await?;
    Ok(Judgment { decision, thought, source: JudgmentSource::Judge })
}
