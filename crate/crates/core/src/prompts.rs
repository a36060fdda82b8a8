//! Prompt templates with named `{PLACEHOLDER}` slots.
//!
//! A template is split into literal and slot segments once, at load time.
//! Rendering is a single pass, so values that happen to contain placeholder
//! syntax (meme text, model output) are never substituted again.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template is missing placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("placeholder {{{0}}} occurs more than once")]
    DuplicatePlaceholder(String),
    #[error("unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("max_insights must be positive")]
    ZeroMaxInsights,
    #[error("reading {path}: {detail}")]
    Io { path: String, detail: String },
}

pub const MEME_TEXT: &str = "MEME_TEXT";
pub const PRIOR_INSIGHTS: &str = "PRIOR_INSIGHTS";
pub const NOTE: &str = "NOTE";
pub const D1_ANSWER: &str = "D1_ANSWER";
pub const D1_REASON: &str = "D1_REASON";
pub const D2_ANSWER: &str = "D2_ANSWER";
pub const D2_REASON: &str = "D2_REASON";

pub const DEFAULT_DERIVING: &str = include_str!("../prompts/deriving.txt");
pub const DEFAULT_DEBATER: &str = include_str!("../prompts/debater.txt");
pub const DEFAULT_JUDGE: &str = include_str!("../prompts/judge.txt");
pub const DEFAULT_BASELINE: &str = include_str!("../prompts/baseline.txt");

/// Appended as a follow-up turn when a verdict cannot be parsed.
pub const FORMAT_REMINDER: &str = "Your previous reply did not follow the required format. \
Reply again, ending with a single line that reads exactly \"Answer: harmful\" or \"Answer: harmless\".";

pub const DEFAULT_MAX_INSIGHTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

fn is_slot_name(name: &str) -> bool {
    !name.is_empty()
        && name.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_')
        && name.as_bytes()[0].is_ascii_uppercase()
}

impl Template {
    /// Parses `text`, requiring each of `slots` exactly once. Any other
    /// `{UPPER_CASE}` token is rejected; other braces are literal text.
    pub fn parse(text: &str, slots: &[&str]) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_slot_name(&after[..close]) => {
                    let name = &after[..close];
                    if !slots.contains(&name) {
                        return Err(TemplateError::UnknownPlaceholder(name.into()));
                    }
                    literal.push_str(&rest[..open]);
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Slot(name.into()));
                    rest = &after[close + 1..];
                }
                _ => {
                    literal.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        for slot in slots {
            let n = segments.iter().filter(|s| matches!(s, Segment::Slot(x) if x == slot)).count();
            match n {
                0 => return Err(TemplateError::MissingPlaceholder((*slot).into())),
                1 => {}
                _ => return Err(TemplateError::DuplicatePlaceholder((*slot).into())),
            }
        }
        Ok(Template { segments })
    }

    /// Fills every slot. Slots without a value render empty.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(name) => {
                    if let Some((_, v)) = values.iter().find(|(k, _)| k == name) {
                        out.push_str(v);
                    }
                }
            }
        }
        out
    }
}

/// `- item` lines, or `(none)` for an empty list.
pub fn bullet_list<S: AsRef<str>>(items: &[S]) -> String {
    if items.is_empty() {
        return "(none)".into();
    }
    items.iter().map(|i| format!("- {}", i.as_ref())).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivingPromptTemplate {
    pub template: Template,
    pub max_insights: usize,
}

impl DerivingPromptTemplate {
    pub fn new(text: &str, max_insights: usize) -> Result<Self, TemplateError> {
        if max_insights == 0 {
            return Err(TemplateError::ZeroMaxInsights);
        }
        Ok(DerivingPromptTemplate { template: Template::parse(text, &[MEME_TEXT, PRIOR_INSIGHTS])?, max_insights })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DebaterPromptTemplate(pub Template);

impl DebaterPromptTemplate {
    pub fn new(text: &str) -> Result<Self, TemplateError> {
        Template::parse(text, &[MEME_TEXT, NOTE]).map(Self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgePromptTemplate(pub Template);

impl JudgePromptTemplate {
    pub fn new(text: &str) -> Result<Self, TemplateError> {
        Template::parse(text, &[MEME_TEXT, D1_ANSWER, D1_REASON, D2_ANSWER, D2_REASON]).map(Self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselinePromptTemplate(pub Template);

impl BaselinePromptTemplate {
    pub fn new(text: &str) -> Result<Self, TemplateError> {
        Template::parse(text, &[MEME_TEXT]).map(Self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub deriving: DerivingPromptTemplate,
    pub debater: DebaterPromptTemplate,
    pub judge: JudgePromptTemplate,
    pub baseline: BaselinePromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            deriving: DerivingPromptTemplate::new(DEFAULT_DERIVING, DEFAULT_MAX_INSIGHTS)
                .expect("shipped deriving prompt is valid"),
            debater: DebaterPromptTemplate::new(DEFAULT_DEBATER).expect("shipped debater prompt is valid"),
            judge: JudgePromptTemplate::new(DEFAULT_JUDGE).expect("shipped judge prompt is valid"),
            baseline: BaselinePromptTemplate::new(DEFAULT_BASELINE).expect("shipped baseline prompt is valid"),
        }
    }
}

/// Paths to override individual prompts; `None` keeps the shipped default.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptPaths {
    pub deriving: Option<std::path::PathBuf>,
    pub debater: Option<std::path::PathBuf>,
    pub judge: Option<std::path::PathBuf>,
    pub baseline: Option<std::path::PathBuf>,
}

fn read(path: &Path) -> Result<String, TemplateError> {
    std::fs::read_to_string(path)
        .map_err(|e| TemplateError::Io { path: path.display().to_string(), detail: e.to_string() })
}

impl PromptSet {
    pub fn load(paths: &PromptPaths, max_insights: usize) -> Result<Self, TemplateError> {
        let text = |p: &Option<std::path::PathBuf>, default: &str| match p {
            Some(p) => read(p),
            None => Ok(default.to_owned()),
        };
        Ok(PromptSet {
            deriving: DerivingPromptTemplate::new(&text(&paths.deriving, DEFAULT_DERIVING)?, max_insights)?,
            debater: DebaterPromptTemplate::new(&text(&paths.debater, DEFAULT_DEBATER)?)?,
            judge: JudgePromptTemplate::new(&text(&paths.judge, DEFAULT_JUDGE)?)?,
            baseline: BaselinePromptTemplate::new(&text(&paths.baseline, DEFAULT_BASELINE)?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_prompts_parse() {
        let set = PromptSet::default();
        assert_eq!(set.deriving.max_insights, 5);
    }

    #[test]
    fn single_pass_substitution() {
        let t = Template::parse("A {MEME_TEXT} B {NOTE} C", &[MEME_TEXT, NOTE]).unwrap();
        let out = t.render(&[(MEME_TEXT, "{NOTE}"), (NOTE, "n")]);
        assert_eq!(out, "A {NOTE} B n C");
    }

    #[test]
    fn other_braces_are_literal() {
        let t = Template::parse("json {\"a\": 1} {lower} {MEME_TEXT}", &[MEME_TEXT]).unwrap();
        assert_eq!(t.render(&[(MEME_TEXT, "x")]), "json {\"a\": 1} {lower} x");
    }

    #[test]
    fn placeholder_validation() {
        assert_eq!(
            DebaterPromptTemplate::new("{MEME_TEXT} only").unwrap_err(),
            TemplateError::MissingPlaceholder("NOTE".into())
        );
        assert_eq!(
            DerivingPromptTemplate::new("{MEME_TEXT} {MEME_TEXT} {PRIOR_INSIGHTS}", 5).unwrap_err(),
            TemplateError::DuplicatePlaceholder("MEME_TEXT".into())
        );
        assert_eq!(
            BaselinePromptTemplate::new("{MEME_TEXT} {MEME}").unwrap_err(),
            TemplateError::UnknownPlaceholder("MEME".into())
        );
        assert_eq!(DerivingPromptTemplate::new(DEFAULT_DERIVING, 0).unwrap_err(), TemplateError::ZeroMaxInsights);
    }

    #[test]
    fn bullets() {
        assert_eq!(bullet_list::<&str>(&[]), "(none)");
        assert_eq!(bullet_list(&["a", "b"]), "- a\n- b");
    }
}
