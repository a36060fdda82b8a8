//! Deterministic scripted backend.
//!
//! A scenario is a JSONL rule table, evaluated top to bottom against the
//! concatenated message texts; the first matching rule supplies the reply.
//!
//! ```text
//! {"match": "wife beater", "response": "Thought: ...\nAnswer: harmful"}
//! {"match": "hash:0/2", "response": "..."}
//! {"match": "default", "response": "Thought: ...\nAnswer: harmless"}
//! ```
//!
//! `hash:i/n` fires when a stable hash of the prompt falls in bucket `i` of
//! `n`. Prompts containing `ALWAYS_HARMFUL` or `ALWAYS_HARMLESS` bypass the
//! table.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{rendered_prompt, BackendError, ChatBackend, ChatMessage};

const FORCED_HARMFUL: &str = "ALWAYS_HARMFUL";
const FORCED_HARMLESS: &str = "ALWAYS_HARMLESS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    Substring(String),
    HashBucket { bucket: u64, of: u64 },
    Default,
}

impl Matcher {
    fn parse(raw: &str) -> Result<Self, String> {
        if raw == "default" {
            return Ok(Matcher::Default);
        }
        if let Some(spec) = raw.strip_prefix("hash:") {
            let (b, n) = spec.split_once('/').ok_or("hash matcher must be hash:<i>/<n>")?;
            let bucket: u64 = b.trim().parse().map_err(|_| format!("bad bucket {b:?}"))?;
            let of: u64 = n.trim().parse().map_err(|_| format!("bad bucket count {n:?}"))?;
            if of == 0 || bucket >= of {
                return Err(format!("bucket {bucket} out of range for {of} buckets"));
            }
            return Ok(Matcher::HashBucket { bucket, of });
        }
        if raw.is_empty() {
            return Err("empty match string".into());
        }
        Ok(Matcher::Substring(raw.to_owned()))
    }

    fn as_raw(&self) -> String {
        match self {
            Matcher::Substring(s) => s.clone(),
            Matcher::HashBucket { bucket, of } => format!("hash:{bucket}/{of}"),
            Matcher::Default => "default".into(),
        }
    }

    fn fires(&self, prompt: &str) -> bool {
        match self {
            Matcher::Substring(s) => prompt.contains(s.as_str()),
            Matcher::HashBucket { bucket, of } => stable_hash(prompt) % of == *bucket,
            Matcher::Default => true,
        }
    }
}

fn stable_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRule {
    pub matcher: Matcher,
    pub response: String,
}

impl MockRule {
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        MockRule { matcher: Matcher::Substring(needle.into()), response: response.into() }
    }

    pub fn default_rule(response: impl Into<String>) -> Self {
        MockRule { matcher: Matcher::Default, response: response.into() }
    }
}

#[derive(Serialize, Deserialize)]
struct RuleLine {
    #[serde(rename = "match")]
    matcher: String,
    response: String,
}

pub fn parse_scenario(input: &str) -> Result<Vec<MockRule>, BackendError> {
    let mut rules = Vec::new();
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| BackendError::Scenario { line: i + 1, detail };
        let raw: RuleLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let matcher = Matcher::parse(&raw.matcher).map_err(err)?;
        rules.push(MockRule { matcher, response: raw.response });
    }
    Ok(rules)
}

pub struct MockBackend {
    rules: Vec<MockRule>,
    name: String,
}

impl MockBackend {
    pub fn from_rules(rules: Vec<MockRule>) -> Result<Self, BackendError> {
        if !rules.iter().any(|r| r.matcher == Matcher::Default) {
            return Err(BackendError::NoDefaultRule);
        }
        // The name carries a digest of the table so cached replies from one
        // scenario are never served to another.
        let mut hasher = Sha256::new();
        for r in &rules {
            let line = serde_json::to_string(&RuleLine { matcher: r.matcher.as_raw(), response: r.response.clone() })
                .expect("rule serializes");
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        let name = format!("mock-{}", &hex::encode(hasher.finalize())[..16]);
        Ok(MockBackend { rules, name })
    }

    pub fn from_scenario(input: &str) -> Result<Self, BackendError> {
        Self::from_rules(parse_scenario(input)?)
    }

    pub fn respond(&self, messages: &[ChatMessage]) -> String {
        let prompt = rendered_prompt(messages);
        if prompt.contains(FORCED_HARMFUL) {
            return "Thought: The prompt carries the forced-harmful marker.\nAnswer: harmful".into();
        }
        if prompt.contains(FORCED_HARMLESS) {
            return "Thought: The prompt carries the forced-harmless marker.\nAnswer: harmless".into();
        }
        self.rules
            .iter()
            .find(|r| r.matcher.fires(&prompt))
            .map(|r| r.response.clone())
            .expect("a default rule always fires")
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    fn model_name(&self) -> &str {
        &self.name
    }

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        Ok(self.respond(messages))
    }
}
