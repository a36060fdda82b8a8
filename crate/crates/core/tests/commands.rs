mod support;

use std::fs;

use mind_core::backend::BackendKind;
use mind_core::eval::{EvalError, ErrorPolicy};
use mind_core::pipeline::{Mode, SampleTranscript};
use mind_core::retrieval::RetrievalError;
use mind_core::runner::{cmd_eval, cmd_index, cmd_retrieve, cmd_run, cmd_sweep_k, RunError};
use support::*;

fn transcripts(path: &std::path::Path) -> Vec<SampleTranscript> {
    mind_core::eval::parse_report(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn index_is_written_and_deterministic() {
    let w = world(5, 2, 4, 1);
    let config = run_config(&w, "out");
    let first = cmd_index(&config).unwrap();
    assert_eq!((first.entries, first.dim), (5, 4));
    let bytes = fs::read(&first.path).unwrap();
    cmd_index(&config).unwrap();
    assert_eq!(fs::read(&first.path).unwrap(), bytes);
}

#[test]
fn index_reports_offending_line() {
    let w = world(3, 1, 4, 2);
    let mut text = fs::read_to_string(&w.embeddings_path).unwrap();
    text = text.replacen("\"text_vec\":[", "\"text_vec\":[0.5,", 1);
    let mut config = run_config(&w, "out");
    config.embeddings = Some(w.write("bad.jsonl", &text));
    let err = cmd_index(&config).unwrap_err();
    assert!(matches!(err, RunError::Retrieval(RetrievalError::File { line: 2, .. })), "{err}");
}

#[test]
fn stale_index_is_rejected() {
    let w = world(5, 2, 4, 3);
    let mut config = run_config(&w, "out");
    let built = cmd_index(&config).unwrap();
    config.index = Some(built.path);
    cmd_retrieve(&config, "t000").unwrap();
    config.lambda_v = 0.5;
    config.lambda_t = 0.5;
    assert!(matches!(cmd_retrieve(&config, "t000"), Err(RunError::IndexMismatch { .. })));
}

#[test]
fn retrieve_contract() {
    let w = world(8, 2, 6, 4);
    let mut config = run_config(&w, "out");
    let n = cmd_retrieve(&config, "t001").unwrap();
    assert_eq!(n.items.len(), 3);
    assert!(n.items.windows(2).all(|p| p[0].score >= p[1].score));
    assert!(matches!(cmd_retrieve(&config, "nope"), Err(RunError::UnknownTargetId(_))));
    config.k = 0;
    assert!(cmd_retrieve(&config, "t001").unwrap().items.is_empty());
    config.k = 9;
    assert!(matches!(
        cmd_retrieve(&config, "t001"),
        Err(RunError::Retrieval(RetrievalError::KTooLarge { k: 9, available: 8 }))
    ));
}

#[tokio::test]
async fn run_accounts_for_every_call() {
    let w = world(20, 100, 8, 5);
    let config = run_config(&w, "out");
    let outcome = cmd_run(&config, Some("a")).await.unwrap();
    let ts = transcripts(&outcome.transcripts_path());
    assert_eq!(ts.len(), 100);
    let per_sample: usize = ts.iter().map(|t| t.calls.len()).sum();
    assert_eq!(outcome.summary.total_calls as usize, per_sample);
    assert_eq!(outcome.stats.backend_calls as usize + outcome.stats.cache_hits as usize, per_sample);
    assert!(ts.iter().all(|t| [8, 9].contains(&t.calls.len())));
    assert!(ts.iter().any(|t| t.calls.len() == 9) && ts.iter().any(|t| t.calls.len() == 8));
    assert!(outcome.report_dir.join("summary.json").exists());
    assert!(outcome.report_dir.join("run.json").exists());
}

#[tokio::test]
async fn rerun_is_served_from_cache() {
    let w = world(10, 20, 8, 6);
    let config = run_config(&w, "out");
    let first = cmd_run(&config, Some("first")).await.unwrap();
    assert!(first.stats.backend_calls > 0);
    let report = fs::read(first.transcripts_path()).unwrap();
    let summary = fs::read(first.summary_path()).unwrap();
    fs::remove_dir_all(&first.report_dir).unwrap();
    let second = cmd_run(&config, Some("second")).await.unwrap();
    assert_eq!(second.stats.backend_calls, 0);
    assert_eq!(fs::read(second.transcripts_path()).unwrap(), report);
    assert_eq!(fs::read(second.summary_path()).unwrap(), summary);
}

#[tokio::test]
async fn no_ssr_draws_follow_the_seed() {
    let w = world(30, 10, 8, 7);
    let mut config = run_config(&w, "out");
    config.mode = Mode::NoSsr;
    config.seed = 7;
    config.cache = false;
    let similar = |dir: &std::path::Path| -> Vec<Vec<String>> {
        transcripts(&dir.join("transcripts.jsonl")).into_iter().map(|t| t.similar).collect()
    };
    let a = similar(&cmd_run(&config, Some("a")).await.unwrap().report_dir);
    let b = similar(&cmd_run(&config, Some("b")).await.unwrap().report_dir);
    assert_eq!(a, b);
    config.seed = 8;
    let c = similar(&cmd_run(&config, Some("c")).await.unwrap().report_dir);
    assert_ne!(a, c);
}

#[tokio::test]
async fn baseline_needs_no_embeddings() {
    let w = world(3, 4, 4, 8);
    let mut config = run_config(&w, "out");
    config.embeddings = None;
    config.mode = Mode::Baseline;
    let outcome = cmd_run(&config, Some("base")).await.unwrap();
    assert_eq!(outcome.summary.total_calls, 4);
}

#[tokio::test]
async fn unreachable_backend_fails_the_run() {
    let w = world(5, 2, 4, 9);
    let mut config = run_config(&w, "out");
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    config.backend.kind = BackendKind::Http;
    config.backend.endpoint = Some(format!("http://127.0.0.1:{port}/v1/chat/completions"));
    config.backend.model_name = "m".into();
    config.mode = Mode::Baseline;
    config.cache = false;
    let err = cmd_run(&config, Some("dead")).await.unwrap_err();
    assert!(matches!(err, RunError::BackendUnreachable(2)), "{err}");
    assert_eq!(err.exit_code(), mind_core::runner::exit::BACKEND);
}

fn eval_fixture(labels: &[Option<&str>], predictions: &[&str]) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = String::from("{\"id\":\"ref\",\"image\":\"r.png\",\"text\":\"r\",\"split\":\"reference\"}\n");
    let mut report = String::new();
    for (i, (label, pred)) in labels.iter().zip(predictions).enumerate() {
        let mut row = serde_json::json!({"id": format!("m{i}"), "image": "m.png", "text": "t", "split": "test"});
        if let Some(l) = label {
            row["label"] = (*l).into();
        }
        manifest.push_str(&format!("{row}\n"));
        let verdict = if pred.is_empty() {
            serde_json::Value::Null
        } else {
            serde_json::json!({"decision": pred, "thought": "x", "source": "judge"})
        };
        let line = serde_json::json!({"target_id": format!("m{i}"), "mode": "full", "k": 3, "similar": [], "final": verdict, "calls": []});
        report.push_str(&format!("{line}\n"));
    }
    let m = dir.path().join("manifest.jsonl");
    let r = dir.path().join("transcripts.jsonl");
    fs::write(&m, manifest).unwrap();
    fs::write(&r, report).unwrap();
    (dir, m, r)
}

#[test]
fn eval_worked_example() {
    // tp=3 fp=1 fn=1 tn=5, with every fine-grained harmful label.
    let labels = [
        "harmful", "very harmful", "partially harmful", "harmless", "harmful", "harmless", "harmless", "harmless",
        "harmless", "harmless",
    ];
    let preds = [
        "harmful", "harmful", "harmful", "harmful", "harmless", "harmless", "harmless", "harmless", "harmless",
        "harmless",
    ];
    let labels: Vec<Option<&str>> = labels.iter().map(|l| Some(*l)).collect();
    let (_dir, m, r) = eval_fixture(&labels, &preds);
    let s = cmd_eval(&r, &m, ErrorPolicy::Incorrect).unwrap();
    let c = s.confusion;
    assert_eq!((c.tp, c.fp, c.fn_, c.tn), (3, 1, 1, 5));
    assert!(s.render_text().starts_with("accuracy 0.8000\nmacro-F1 0.7917\n"));
    assert!(r.with_file_name("eval-summary.json").exists());
}

#[test]
fn eval_boundaries() {
    let (_dir, m, r) = eval_fixture(&[], &[]);
    assert!(matches!(cmd_eval(&r, &m, ErrorPolicy::Incorrect), Err(RunError::Eval(EvalError::NoScoredSamples))));

    let (_dir, m, r) = eval_fixture(&[None, None, None], &["harmful", "harmless", ""]);
    let s = cmd_eval(&r, &m, ErrorPolicy::Incorrect).unwrap();
    assert_eq!(s.confusion.skipped, 3);
    assert_eq!((s.accuracy, s.macro_f1), (None, None));

    let (_dir, m, r) = eval_fixture(&[Some("harmful"), Some("harmless")], &["", "harmless"]);
    let wrong = cmd_eval(&r, &m, ErrorPolicy::Incorrect).unwrap();
    assert_eq!(wrong.accuracy, Some(0.5));
    let lenient = cmd_eval(&r, &m, ErrorPolicy::Harmless).unwrap();
    assert_eq!(lenient.confusion.fn_, 1);
    let skip = cmd_eval(&r, &m, ErrorPolicy::Skip).unwrap();
    assert_eq!((skip.accuracy, skip.confusion.skipped), (Some(1.0), 1));

    fs::write(&r, "{\"target_id\":\"ghost\",\"mode\":\"full\",\"k\":3,\"similar\":[],\"final\":null,\"calls\":[]}\n").unwrap();
    assert!(matches!(cmd_eval(&r, &m, ErrorPolicy::Incorrect), Err(RunError::Eval(EvalError::UnknownTargetId(_)))));
    fs::write(&r, "\n{not json}\n").unwrap();
    assert!(matches!(cmd_eval(&r, &m, ErrorPolicy::Incorrect), Err(RunError::Eval(EvalError::Report { line: 2, .. }))));
}

#[tokio::test]
async fn sweep_grows_calls_with_k() {
    let w = world(10, 5, 8, 10);
    let config = run_config(&w, "out");
    let rows = cmd_sweep_k(&config, &[3, 1, 3], Some("sweep")).await.unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), [1, 3]);
    assert!(rows[0].total_calls < rows[1].total_calls);
    assert!(matches!(cmd_sweep_k(&config, &[], None).await, Err(RunError::EmptySweep)));
}
