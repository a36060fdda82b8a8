//! Accuracy and macro-F1 over binary harmfulness predictions.
//!
//! Harmful is the positive class. Precision, recall or F1 with a zero
//! denominator are defined as 0.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::AgentRole;
use crate::model::{BinaryLabel, DatasetManifest};
use crate::pipeline::{Mode, SampleTranscript};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("no scored samples")]
    NoScoredSamples,
    #[error("report references unknown meme id {0:?}")]
    UnknownTargetId(String),
    #[error("report line {line}: {detail}")]
    Report { line: usize, detail: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    /// Samples left out of the counts: unlabeled, or errored under
    /// [`ErrorPolicy::Skip`].
    pub skipped: u64,
}

impl ConfusionCounts {
    pub fn scored(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: BinaryLabel, gold: BinaryLabel) {
        use BinaryLabel::*;
        match (predicted, gold) {
            (Harmful, Harmful) => self.tp += 1,
            (Harmful, Harmless) => self.fp += 1,
            (Harmless, Harmful) => self.fn_ += 1,
            (Harmless, Harmless) => self.tn += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (BinaryLabel, BinaryLabel)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (p, g) in pairs {
            c.record(p, g);
        }
        c
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        ClassMetrics { precision, recall, f1 }
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64, EvalError> {
    if c.scored() == 0 {
        return Err(EvalError::NoScoredSamples);
    }
    Ok(ratio(c.tp + c.tn, c.scored()))
}

/// (harmful, harmless) per-class metrics.
pub fn per_class(c: &ConfusionCounts) -> (ClassMetrics, ClassMetrics) {
    (
        ClassMetrics::from_counts(c.tp, c.fp, c.fn_),
        // Harmless as the positive class swaps the roles of the cells.
        ClassMetrics::from_counts(c.tn, c.fn_, c.fp),
    )
}

pub fn macro_f1(c: &ConfusionCounts) -> Result<f64, EvalError> {
    if c.scored() == 0 {
        return Err(EvalError::NoScoredSamples);
    }
    let (harmful, harmless) = per_class(c);
    Ok((harmful.f1 + harmless.f1) / 2.0)
}

/// How a labeled sample without a final judgment is scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    /// Counted as a wrong prediction.
    #[default]
    Incorrect,
    /// Treated as a `harmless` prediction.
    Harmless,
    /// Left out of the counts.
    Skip,
}

impl std::str::FromStr for ErrorPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "incorrect" => Ok(ErrorPolicy::Incorrect),
            "harmless" => Ok(ErrorPolicy::Harmless),
            "skip" => Ok(ErrorPolicy::Skip),
            _ => Err(format!("unknown error policy {s:?} (expected incorrect, harmless or skip)")),
        }
    }
}

/// Run parameters echoed into the summary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub mode: Option<Mode>,
    pub k: Option<usize>,
    pub lambda_v: Option<f64>,
    pub lambda_t: Option<f64>,
    pub seed: Option<u64>,
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    #[serde(flatten)]
    pub run: RunInfo,
    pub samples: u64,
    pub errored: u64,
    pub error_policy: ErrorPolicy,
    pub confusion: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub harmful: Option<ClassMetrics>,
    pub harmless: Option<ClassMetrics>,
    pub call_totals: BTreeMap<AgentRole, u64>,
    pub total_calls: u64,
}

impl MetricsSummary {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let c = &self.confusion;
        match (self.accuracy, self.macro_f1) {
            (Some(acc), Some(f1)) => out.push_str(&format!("accuracy {acc:.4}\nmacro-F1 {f1:.4}\n")),
            _ => out.push_str("accuracy n/a\nmacro-F1 n/a\n"),
        }
        out.push_str(&format!(
            "tp {} fp {} fn {} tn {} | skipped {} errored {} of {} samples\n",
            c.tp, c.fp, c.fn_, c.tn, c.skipped, self.errored, self.samples
        ));
        let calls: Vec<String> = self.call_totals.iter().map(|(r, n)| format!("{r} {n}")).collect();
        out.push_str(&format!("calls {} ({})\n", self.total_calls, calls.join(", ")));
        out
    }
}

/// Joins transcripts with merged gold labels from `manifest`.
pub fn evaluate_report(
    report: &[SampleTranscript],
    manifest: &DatasetManifest,
    policy: ErrorPolicy,
) -> Result<MetricsSummary, EvalError> {
    let golds: HashMap<&str, Option<BinaryLabel>> =
        manifest.memes.iter().map(|m| (m.id.as_str(), m.gold())).collect();
    let mut confusion = ConfusionCounts::default();
    let mut errored = 0;
    let mut call_totals: BTreeMap<AgentRole, u64> = BTreeMap::new();
    for t in report {
        let gold = *golds
            .get(t.target_id.as_str())
            .ok_or_else(|| EvalError::UnknownTargetId(t.target_id.clone()))?;
        for c in &t.calls {
            *call_totals.entry(c.agent_role).or_default() += 1;
        }
        let predicted = t.verdict.as_ref().map(|j| j.decision);
        if predicted.is_none() {
            errored += 1;
        }
        let Some(gold) = gold else {
            confusion.skipped += 1;
            continue;
        };
        match (predicted, policy) {
            (Some(p), _) => confusion.record(p, gold),
            (None, ErrorPolicy::Incorrect) => confusion.record(gold.flipped(), gold),
            (None, ErrorPolicy::Harmless) => confusion.record(BinaryLabel::Harmless, gold),
            (None, ErrorPolicy::Skip) => confusion.skipped += 1,
        }
    }
    let uniform = |f: fn(&SampleTranscript) -> usize| {
        let first = report.first().map(f)?;
        report.iter().all(|t| f(t) == first).then_some(first)
    };
    let mode = report.first().map(|t| t.mode).filter(|m| report.iter().all(|t| t.mode == *m));
    let (harmful, harmless) = if confusion.scored() > 0 {
        let (h, l) = per_class(&confusion);
        (Some(h), Some(l))
    } else {
        (None, None)
    };
    Ok(MetricsSummary {
        run: RunInfo { mode, k: uniform(|t| t.k), ..RunInfo::default() },
        samples: report.len() as u64,
        errored,
        error_policy: policy,
        accuracy: accuracy(&confusion).ok(),
        macro_f1: macro_f1(&confusion).ok(),
        harmful,
        harmless,
        total_calls: call_totals.values().sum(),
        call_totals,
        confusion,
    })
}

/// Parses a transcripts JSONL report.
pub fn parse_report(input: &str) -> Result<Vec<SampleTranscript>, EvalError> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Report { line: i + 1, detail: e.to_string() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use BinaryLabel::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn, skipped: 0 }
    }

    #[test]
    fn worked_example() {
        // F1_harmful = 2*0.75*0.75/1.5 = 0.75; harmless P = 5/6, R = 5/6.
        let c = counts(3, 1, 1, 5);
        assert_eq!(accuracy(&c).unwrap(), 0.8);
        assert!((macro_f1(&c).unwrap() - (0.75 + 5.0 / 6.0) / 2.0).abs() < 1e-12);
        assert!((macro_f1(&c).unwrap() - 0.79166667).abs() < 1e-8);
    }

    #[test]
    fn perfect_and_empty() {
        let c = counts(4, 0, 0, 6);
        assert_eq!(accuracy(&c).unwrap(), 1.0);
        assert_eq!(macro_f1(&c).unwrap(), 1.0);
        assert_eq!(accuracy(&counts(0, 0, 0, 0)), Err(EvalError::NoScoredSamples));
        assert_eq!(macro_f1(&counts(0, 0, 0, 0)), Err(EvalError::NoScoredSamples));
    }

    #[test]
    fn all_harmless_predictions() {
        // 3 harmful gold, 7 harmless gold, everything predicted harmless.
        let c = ConfusionCounts::from_pairs(
            std::iter::repeat_n((Harmless, Harmful), 3).chain(std::iter::repeat_n((Harmless, Harmless), 7)),
        );
        let (harmful, harmless) = per_class(&c);
        assert_eq!(harmful.f1, 0.0);
        // harmless: P = 7/10, R = 1 -> F1 = 14/17
        assert!((harmless.f1 - 14.0 / 17.0).abs() < 1e-12);
        assert!((macro_f1(&c).unwrap() - harmless.f1 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn error_policy_names() {
        assert_eq!("skip".parse::<ErrorPolicy>().unwrap(), ErrorPolicy::Skip);
        assert!("drop".parse::<ErrorPolicy>().is_err());
    }
}
