mod common;

use std::fs;
use std::path::Path;
use std::sync::atomic::Ordering;
use std::time::Duration;

use common::{is_coder_request, spawn_stub, StubReply};
use opeforge::optimizer::llm::{LlmConfig, LlmProposer};
use opeforge::optimizer::{run_optimization, IterationOutcome, RunOptions};
use opeforge::patch::{FailureKind, ModificationMode};

const SPEC: &str = "\
env.contexts = 3
env.actions = 4
data.n = 300
reward_model.kind = tabular
reward_model.alpha = 1.0
";

fn config(url: String) -> LlmConfig {
    let mut c = LlmConfig::new(url, "test-key");
    c.timeout = Duration::from_millis(300);
    c.retries = 1;
    c.backoff = Duration::from_millis(10);
    c
}

/// Runs `iterations` iterations against a stub driven by `coder`, which
/// answers coder requests; analyzer requests get a fixed instruction.
fn run_with<F>(mode: ModificationMode, iterations: usize, coder: F) -> (Vec<IterationOutcome>, String)
where
    F: Fn(&str) -> StubReply + Send + Sync + 'static,
{
    let (url, _) = spawn_stub(move |body| {
        if is_coder_request(body) {
            coder(body)
        } else {
            StubReply::Content("Increase reward_model.alpha to 2.0.".into())
        }
    });
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("s.spec");
    fs::write(&spec, SPEC).unwrap();
    let work = tmp.path().join("w");
    let proposer = LlmProposer::new(config(url)).unwrap();
    let options = RunOptions {
        iterations,
        mode,
        ..RunOptions::default()
    };
    let result = run_optimization(&spec, &work, &proposer, options).unwrap();
    let log = fs::read_to_string(Path::new(&work).join("result.txt")).unwrap();
    (result.iterations.into_iter().map(|r| r.outcome).collect(), log)
}

fn failure_kind(o: &IterationOutcome) -> Option<FailureKind> {
    match o {
        IterationOutcome::Failure(c) => Some(c.kind),
        IterationOutcome::Success(_) => None,
    }
}

#[test]
fn whole_document_reply_succeeds() {
    let edited = SPEC.replace("alpha = 1.0", "alpha = 2.0");
    let (outcomes, log) = run_with(ModificationMode::WholeCode, 2, move |_| StubReply::Content(edited.clone()));
    assert!(outcomes.iter().all(|o| failure_kind(o).is_none()), "{log}");
}

#[test]
fn fenced_diff_reply_applies() {
    let diff = "```diff\n--- a/spec.spec\n+++ b/spec.spec\n@@ -5 +5 @@\n-reward_model.alpha = 1.0\n+reward_model.alpha = 2.0\n```\n";
    let (outcomes, log) = run_with(ModificationMode::ManualPatch, 1, move |_| StubReply::Content(diff.into()));
    assert!(failure_kind(&outcomes[0]).is_none(), "{log}");
}

#[test]
fn timeout_is_infrastructure() {
    let (outcomes, log) = run_with(ModificationMode::WholeCode, 1, |_| StubReply::Hang(Duration::from_secs(2)));
    assert_eq!(failure_kind(&outcomes[0]), Some(FailureKind::Infrastructure));
    assert!(log.contains("Timeout of 0.3s exceeded"), "{log}");
}

#[test]
fn server_errors_are_retried_then_infrastructure() {
    let (url, count) = spawn_stub(|_| StubReply::Status(503));
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("s.spec");
    fs::write(&spec, SPEC).unwrap();
    let proposer = LlmProposer::new(config(url)).unwrap();
    let result = run_optimization(&spec, &tmp.path().join("w"), &proposer, RunOptions { iterations: 1, ..RunOptions::default() }).unwrap();
    assert_eq!(failure_kind(&result.iterations[0].outcome), Some(FailureKind::Infrastructure));
    // one attempt plus one retry
    assert_eq!(count.load(Ordering::SeqCst), 2);
}

#[test]
fn diff_in_whole_document_mode_is_file_corruption() {
    let reply = "--- a/main.py\n+++ b/main.py\n@@ -148,8 +148,8 @@\n-    gamma=0.95,\n+    gamma=0.99,\n";
    let (outcomes, log) = run_with(ModificationMode::WholeCode, 1, move |_| StubReply::Content(reply.into()));
    assert_eq!(failure_kind(&outcomes[0]), Some(FailureKind::FileCorruption), "{log}");
}

#[test]
fn empty_reply_is_a_syntax_failure() {
    let (outcomes, _) = run_with(ModificationMode::WholeCode, 1, |_| StubReply::Content("   ".into()));
    assert_eq!(failure_kind(&outcomes[0]), Some(FailureKind::SyntaxCodeError));
}

#[test]
fn mismatched_diff_is_a_syntax_failure() {
    let diff = "--- a/spec.spec\n+++ b/spec.spec\n@@ -5 +5 @@\n-reward_model.alpha = 7.0\n+reward_model.alpha = 2.0\n";
    let (outcomes, log) = run_with(ModificationMode::ManualPatch, 1, move |_| StubReply::Content(diff.into()));
    assert_eq!(failure_kind(&outcomes[0]), Some(FailureKind::SyntaxCodeError));
    assert!(log.contains("FAIL syntax_code_error context mismatch"), "{log}");
}

#[test]
fn unsupported_key_is_a_syntax_failure() {
    let reply = format!("{SPEC}reward_model.gamma = 0.99\n");
    let (outcomes, log) = run_with(ModificationMode::WholeCode, 1, move |_| StubReply::Content(reply.clone()));
    assert_eq!(failure_kind(&outcomes[0]), Some(FailureKind::SyntaxCodeError));
    assert!(log.contains("unknown key reward_model.gamma"), "{log}");
}
