//! Shared domain types: memes, labels and dataset manifests.
//!
//! A manifest is a JSONL file with one meme per line:
//!
//! ```text
//! {"id": "m1", "image": "img/m1.png", "text": "...", "label": "harmful", "split": "test"}
//! ```
//!
//! `label` is optional. Row numbers in errors are 1-based line numbers.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("duplicate meme id {0:?}")]
    DuplicateId(String),
    #[error("row {row}: missing field `{field}`")]
    MissingField { row: usize, field: &'static str },
    #[error("row {row}: bad split {value:?} (expected \"reference\" or \"test\")")]
    BadSplit { row: usize, value: String },
    #[error("row {row}: bad label {value:?}")]
    BadLabel { row: usize, value: String },
    #[error("row {row}: empty meme id")]
    EmptyId { row: usize },
    #[error("line {line}: malformed record: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("manifest has no {0} memes")]
    EmptySplit(Split),
    #[error("reading {path}: {detail}")]
    Io { path: String, detail: String },
}

/// Fine-grained label as it appears in dataset files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawLabel {
    #[serde(rename = "harmful")]
    Harmful,
    #[serde(rename = "harmless")]
    Harmless,
    #[serde(rename = "very harmful")]
    VeryHarmful,
    #[serde(rename = "partially harmful")]
    PartiallyHarmful,
}

impl RawLabel {
    pub const ALL: [RawLabel; 4] = [
        RawLabel::Harmful,
        RawLabel::Harmless,
        RawLabel::VeryHarmful,
        RawLabel::PartiallyHarmful,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RawLabel::Harmful => "harmful",
            RawLabel::Harmless => "harmless",
            RawLabel::VeryHarmful => "very harmful",
            RawLabel::PartiallyHarmful => "partially harmful",
        }
    }
}

impl FromStr for RawLabel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RawLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or(())
    }
}

/// The binary decision every stage of the pipeline ultimately produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Harmful,
    Harmless,
}

impl BinaryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::Harmful => "harmful",
            BinaryLabel::Harmless => "harmless",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            BinaryLabel::Harmful => BinaryLabel::Harmless,
            BinaryLabel::Harmless => BinaryLabel::Harmful,
        }
    }
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Collapses the three-class scheme (very/partially harmful, harmless) onto
/// the binary one. Both harmful grades become `Harmful`.
pub fn merge_label(raw: RawLabel) -> BinaryLabel {
    match raw {
        RawLabel::Harmful | RawLabel::VeryHarmful | RawLabel::PartiallyHarmful => {
            BinaryLabel::Harmful
        }
        RawLabel::Harmless => BinaryLabel::Harmless,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Reference,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Reference => "reference",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" => Ok(Split::Reference),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meme {
    pub id: String,
    pub image_ref: String,
    pub text: String,
    pub label: Option<RawLabel>,
    pub split: Split,
}

impl Meme {
    pub fn gold(&self) -> Option<BinaryLabel> {
        self.label.map(merge_label)
    }
}

/// One manifest line before validation. Every field is optional here so
/// that missing fields are reported with their row instead of as a generic
/// decode failure.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub memes: Vec<Meme>,
}

impl DatasetManifest {
    pub fn get(&self, id: &str) -> Option<&Meme> {
        self.memes.iter().find(|m| m.id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Meme> {
        self.memes.iter().filter(move |m| m.split == split)
    }

    pub fn references(&self) -> impl Iterator<Item = &Meme> {
        self.split(Split::Reference)
    }

    pub fn tests(&self) -> impl Iterator<Item = &Meme> {
        self.split(Split::Test)
    }

    /// Precondition for a full pipeline run: both splits are populated.
    pub fn check_runnable(&self) -> Result<(), ManifestError> {
        for split in [Split::Reference, Split::Test] {
            if self.split(split).next().is_none() {
                return Err(ManifestError::EmptySplit(split));
            }
        }
        Ok(())
    }

    pub fn to_rows(&self) -> Vec<RawRecord> {
        self.memes
            .iter()
            .map(|m| RawRecord {
                id: Some(m.id.clone()),
                image: Some(m.image_ref.clone()),
                text: Some(m.text.clone()),
                label: m.label.map(|l| l.as_str().to_owned()),
                split: Some(m.split.as_str().to_owned()),
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in self.to_rows() {
            out.push_str(&serde_json::to_string(&row).expect("manifest rows serialize"));
            out.push('\n');
        }
        out
    }
}

pub fn validate_manifest(rows: Vec<RawRecord>) -> Result<DatasetManifest, ManifestError> {
    let mut seen = HashSet::new();
    let mut memes = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let n = i + 1;
        let id = row.id.ok_or(ManifestError::MissingField { row: n, field: "id" })?;
        if id.is_empty() {
            return Err(ManifestError::EmptyId { row: n });
        }
        let image_ref = row.image.ok_or(ManifestError::MissingField { row: n, field: "image" })?;
        let text = row.text.ok_or(ManifestError::MissingField { row: n, field: "text" })?;
        let split_raw = row.split.ok_or(ManifestError::MissingField { row: n, field: "split" })?;
        let split = split_raw
            .parse()
            .map_err(|_| ManifestError::BadSplit { row: n, value: split_raw.clone() })?;
        let label = match row.label {
            None => None,
            Some(v) => Some(
                v.parse::<RawLabel>()
                    .map_err(|_| ManifestError::BadLabel { row: n, value: v.clone() })?,
            ),
        };
        if !seen.insert(id.clone()) {
            return Err(ManifestError::DuplicateId(id));
        }
        memes.push(Meme { id, image_ref, text, label, split });
    }
    Ok(DatasetManifest { memes })
}

/// Parses manifest JSONL. Blank lines are ignored but still counted, so row
/// numbers in errors match line numbers in the file.
pub fn parse_manifest(input: &str) -> Result<DatasetManifest, ManifestError> {
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: RawRecord = serde_json::from_str(line)
            .map_err(|e| ManifestError::Syntax { line: i + 1, detail: e.to_string() })?;
        rows.push(row);
        lines.push(i + 1);
    }
    // validate_manifest numbers rows by position; remap to file lines.
    validate_manifest(rows).map_err(|e| match e {
        ManifestError::MissingField { row, field } => {
            ManifestError::MissingField { row: lines[row - 1], field }
        }
        ManifestError::BadSplit { row, value } => {
            ManifestError::BadSplit { row: lines[row - 1], value }
        }
        ManifestError::BadLabel { row, value } => {
            ManifestError::BadLabel { row: lines[row - 1], value }
        }
        ManifestError::EmptyId { row } => ManifestError::EmptyId { row: lines[row - 1] },
        other => other,
    })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|e| ManifestError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut manifest = parse_manifest(&text)?;
    // Relative image paths are relative to the manifest file.
    if let Some(dir) = path.parent() {
        for meme in &mut manifest.memes {
            if Path::new(&meme.image_ref).is_relative() {
                meme.image_ref = dir.join(&meme.image_ref).display().to_string();
            }
        }
    }
    Ok(manifest)
}
