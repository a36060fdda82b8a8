mod support;

use mind_core::backend::AgentRole;
use mind_core::debate::JudgmentSource;
use mind_core::insight::parse_insights;
use mind_core::model::BinaryLabel;
use mind_core::pipeline::{infer_sample, Mode, Stage};
use mind_core::prompts::{bullet_list, FORMAT_REMINDER};
use support::*;

fn expected_calls(mode: Mode, disagree: bool) -> usize {
    match mode {
        Mode::Full | Mode::NoSsr => 8 + usize::from(disagree),
        Mode::FwdOnly | Mode::BackOnly => 4,
        Mode::NoIai => 7,
        Mode::NoRid | Mode::Baseline => 1,
    }
}

#[tokio::test]
async fn call_counts_per_mode() {
    let w = world(12, 2, 8, 1);
    let target = w.target(0);
    let first = w.neighbor_texts(target, 3)[0].clone();
    for mode in Mode::ALL {
        for (fwd, back) in [("harmful", "harmful"), ("harmful", "harmless")] {
            let rec = Recorder::new(debate_script(first.clone(), fwd, back, "harmless"));
            let ctx = w.context(rec.clone(), 3, 7);
            let t = infer_sample(&ctx, target, mode).await;
            // Random references in no_ssr do not follow the script's
            // neighbour order, so only the total is checked there.
            if mode == Mode::NoSsr {
                assert!([8, 9].contains(&t.calls.len()), "{mode}: {}", t.calls.len());
                continue;
            }
            let disagree = fwd != back;
            assert_eq!(t.calls.len(), expected_calls(mode, disagree), "{mode} disagree={disagree}");
            assert_eq!(rec.calls(), t.calls.len());
            assert!(t.verdict.is_some(), "{mode}: {:?}", t.errors);
            let seq: Vec<u32> = t.calls.iter().map(|c| c.sequence_no).collect();
            assert_eq!(seq, (1..=t.calls.len() as u32).collect::<Vec<_>>());
        }
    }
}

#[tokio::test]
async fn transcript_lists_calls_by_stage() {
    let w = world(12, 1, 8, 2);
    let target = w.target(0);
    let first = w.neighbor_texts(target, 3)[0].clone();
    let rec = Recorder::new(debate_script(first, "harmful", "harmless", "harmful"));
    let t = infer_sample(&w.context(rec, 3, 0), target, Mode::Full).await;
    let roles: Vec<AgentRole> = t.calls.iter().map(|c| c.agent_role).collect();
    use AgentRole::*;
    assert_eq!(
        roles,
        [DerivingFwd, DerivingFwd, DerivingFwd, DerivingBack, DerivingBack, DerivingBack, DebaterFwd, DebaterBack, Judge]
    );
}

#[tokio::test]
async fn derivation_chains_and_orders() {
    let w = world(15, 3, 16, 3);
    for n in 0..3 {
        let target = w.target(n);
        let neighbors = w.neighbor_texts(target, 3);
        let rec = Recorder::new(debate_script(neighbors[0].clone(), "harmful", "harmful", "harmful"));
        let t = infer_sample(&w.context(rec.clone(), 3, 0), target, Mode::Full).await;
        for (role, order) in [
            (AgentRole::DerivingFwd, neighbors.clone()),
            (AgentRole::DerivingBack, neighbors.iter().rev().cloned().collect()),
        ] {
            let calls: Vec<_> = t.calls.iter().filter(|c| c.agent_role == role).collect();
            assert_eq!(calls.len(), 3);
            let mut prior: Vec<String> = Vec::new();
            for (step, call) in calls.iter().enumerate() {
                let prompt = rec.prompt_for(&call.response_text).unwrap();
                assert_eq!(meme_text(&prompt), order[step], "{role} step {}", step + 1);
                assert_eq!(prior_insights(&prompt), prior, "{role} step {}", step + 1);
                if step == 0 {
                    assert!(prompt.contains(&format!("{DERIVING_MARK}\n(none)")));
                } else {
                    assert!(prompt.contains(&bullet_list(&prior)));
                }
                prior = parse_insights(&call.response_text, 5).unwrap();
            }
        }
        let fwd = t.insights_fwd.unwrap().items;
        let mut back = t.insights_back.unwrap().items;
        back.reverse();
        assert_eq!(fwd, back);
    }
}

#[tokio::test]
async fn consensus_truth_table() {
    let w = world(10, 1, 8, 4);
    let target = w.target(0);
    let first = w.neighbor_texts(target, 3)[0].clone();
    let cases = [
        ("harmful", "harmful", "harmless", BinaryLabel::Harmful, false),
        ("harmless", "harmless", "harmful", BinaryLabel::Harmless, false),
        ("harmful", "harmless", "harmless", BinaryLabel::Harmless, true),
        ("harmless", "harmful", "harmful", BinaryLabel::Harmful, true),
        ("harmful", "harmless", "harmful", BinaryLabel::Harmful, true),
        ("harmless", "harmful", "harmless", BinaryLabel::Harmless, true),
    ];
    for (fwd, back, judge, expected, judged) in cases {
        let rec = Recorder::new(debate_script(first.clone(), fwd, back, judge));
        let t = infer_sample(&w.context(rec.clone(), 3, 0), target, Mode::Full).await;
        let v = t.verdict.as_ref().unwrap();
        assert_eq!(v.decision, expected, "({fwd}, {back})");
        assert_eq!(t.calls_for(AgentRole::Judge), usize::from(judged));
        assert_eq!(v.source, if judged { JudgmentSource::Judge } else { JudgmentSource::Consensus });
        assert_eq!(t.judgment_fwd.as_ref().unwrap().decision.as_str(), fwd);
        assert_eq!(t.judgment_back.as_ref().unwrap().decision.as_str(), back);
        if judged {
            let prompt = rec.log().into_iter().find(|(p, _)| p.contains(JUDGE_MARK)).unwrap().0;
            assert!(prompt.contains(&format!("Debater 1 believes that:\nThe correct answer should be: {fwd}")));
            assert!(prompt.contains(&format!("Debater 2 believes that:\nThe correct answer should be: {back}")));
        }
    }
}

#[tokio::test]
async fn format_retry_recovers() {
    let w = world(10, 1, 8, 5);
    let target = w.target(0);
    let rec = Recorder::new(|p: &str| {
        if p.contains(FORMAT_REMINDER) {
            verdict("harmful")
        } else {
            "I would rather not say.".into()
        }
    });
    let t = infer_sample(&w.context(rec, 3, 0), target, Mode::Baseline).await;
    assert_eq!(t.calls.len(), 2);
    assert!(!t.calls[0].format_retry && t.calls[1].format_retry);
    assert_eq!(t.verdict.unwrap().decision, BinaryLabel::Harmful);
}

#[tokio::test]
async fn format_retry_in_debate() {
    let w = world(10, 1, 8, 6);
    let target = w.target(0);
    let first = format!("saw {}", w.neighbor_texts(target, 3)[0]);
    let rec = Recorder::new(move |p: &str| {
        if p.contains(DERIVING_MARK) {
            chaining_deriver(p)
        } else if p.contains(DEBATER_MARK) && note_items(p)[0] == first && !p.contains(FORMAT_REMINDER) {
            "Thought: unsure\nAnswer: maybe".into()
        } else {
            verdict("harmless")
        }
    });
    let t = infer_sample(&w.context(rec, 3, 0), target, Mode::Full).await;
    assert_eq!(t.calls.len(), 9);
    assert_eq!(t.calls_for(AgentRole::DebaterFwd), 2);
    assert_eq!(t.calls.iter().filter(|c| c.format_retry).count(), 1);
    assert_eq!(t.verdict.unwrap().source, JudgmentSource::Consensus);
}

#[tokio::test]
async fn unparseable_debater_is_a_sample_error() {
    let w = world(10, 1, 8, 7);
    let target = w.target(0);
    let first = format!("saw {}", w.neighbor_texts(target, 3)[0]);
    let rec = Recorder::new(move |p: &str| {
        if p.contains(DERIVING_MARK) {
            chaining_deriver(p)
        } else if p.contains(DEBATER_MARK) && note_items(p)[0] == first {
            "no verdict here".into()
        } else {
            verdict("harmful")
        }
    });
    let t = infer_sample(&w.context(rec, 3, 0), target, Mode::Full).await;
    assert!(t.verdict.is_none());
    assert_eq!(t.errors.len(), 1);
    assert_eq!(t.errors[0].stage, Stage::DebaterFwd);
    assert_eq!(t.errors[0].kind, "unparseable");
    assert_eq!(t.calls_for(AgentRole::Judge), 0);
    assert_eq!(t.calls.len(), 9);
}

#[tokio::test]
async fn no_iai_note_is_forward_then_backward() {
    let w = world(10, 1, 8, 8);
    let target = w.target(0);
    let neighbors = w.neighbor_texts(target, 3);
    let rec = Recorder::new(debate_script(neighbors[0].clone(), "harmful", "harmful", "harmful"));
    let t = infer_sample(&w.context(rec.clone(), 3, 0), target, Mode::NoIai).await;
    let prompt = rec.prompt_for(&t.calls.last().unwrap().response_text).unwrap();
    let fwd = t.insights_fwd.unwrap().items;
    let back = t.insights_back.unwrap().items;
    assert_eq!(note_items(&prompt), [fwd, back].concat());
    assert_eq!(t.verdict.unwrap().source, JudgmentSource::Single);
}

#[tokio::test]
async fn no_rid_note_lists_similar_texts() {
    let w = world(10, 1, 8, 9);
    let target = w.target(0);
    let neighbors = w.neighbor_texts(target, 3);
    let rec = Recorder::new(|_: &str| verdict("harmless"));
    let t = infer_sample(&w.context(rec.clone(), 3, 0), target, Mode::NoRid).await;
    assert_eq!(note_items(&rec.log()[0].0), neighbors);
    assert_eq!(t.calls[0].agent_role, AgentRole::Baseline);
}

#[tokio::test]
async fn failed_derivation_stops_the_sample() {
    let w = world(10, 1, 8, 10);
    let target = w.target(0);
    let rec = Recorder::new(|p: &str| if p.contains(DERIVING_MARK) { "   ".into() } else { verdict("harmful") });
    let t = infer_sample(&w.context(rec, 3, 0), target, Mode::Full).await;
    assert!(t.verdict.is_none());
    let stages: Vec<Stage> = t.errors.iter().map(|e| e.stage).collect();
    assert_eq!(stages, [Stage::DerivingFwd, Stage::DerivingBack]);
    assert_eq!(t.errors[0].kind, "empty_response");
}

#[tokio::test]
async fn k_too_large_is_a_retrieval_error() {
    let w = world(4, 1, 8, 11);
    let rec = Recorder::new(|_: &str| verdict("harmful"));
    let t = infer_sample(&w.context(rec.clone(), 5, 0), w.target(0), Mode::Full).await;
    assert_eq!(t.errors[0].stage, Stage::Retrieval);
    assert_eq!(rec.calls(), 0);
    let t = infer_sample(&w.context(rec, 5, 0), w.target(0), Mode::NoSsr).await;
    assert_eq!(t.errors[0].stage, Stage::Retrieval);
}
