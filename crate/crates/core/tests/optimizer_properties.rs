mod common;

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use opeforge::estimators::Direction;
use opeforge::optimizer::{
    classify_outcome, percentage_change, run_optimization, select_best, AgentError, IterationOutcome, NullProposer,
    OutcomeClass, Proposer, ProposerInput, RandomPerturb, RunOptions, Session, RESULT_FILE,
};
use opeforge::patch::{FailureKind, ModificationMode};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const SPEC: &str = "\
env.contexts = 3
env.actions = 4
data.n = 300
reward_model.kind = tabular
reward_model.alpha = 1.0
objective.metric = relative_ee(dr)
objective.direction = minimize
";

fn write_spec(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("input.spec");
    fs::write(&path, SPEC).unwrap();
    path
}

fn options(iterations: usize, mode: ModificationMode) -> RunOptions {
    RunOptions {
        iterations,
        mode,
        ..RunOptions::default()
    }
}

/// Exhaustive reference: scan every candidate, keep the first strictly best.
fn scan_best(baseline: f64, values: &[Option<f64>], minimize: bool) -> usize {
    let all: Vec<(usize, f64)> = std::iter::once((0, baseline))
        .chain(values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i + 1, v))))
        .collect();
    let best = all
        .iter()
        .map(|&(_, v)| v)
        .fold(if minimize { f64::INFINITY } else { f64::NEG_INFINITY }, |acc, v| {
            if minimize {
                acc.min(v)
            } else {
                acc.max(v)
            }
        });
    all.iter().find(|&&(_, v)| v == best).unwrap().0
}

fn value_strategy() -> impl Strategy<Value = f64> {
    // a small pool makes ties frequent
    prop_oneof![(0u8..6).prop_map(|k| k as f64 * 0.25), -5.0f64..5.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn selection_matches_exhaustive_scan(
        baseline in value_strategy(),
        values in prop::collection::vec(prop::option::weighted(0.7, value_strategy()), 0..10),
        minimize in any::<bool>(),
    ) {
        let dir = if minimize { Direction::Minimize } else { Direction::Maximize };
        let best = select_best(baseline, &values, dir);
        prop_assert_eq!(best, scan_best(baseline, &values, minimize));
        // never worse than the baseline
        let chosen = if best == 0 { baseline } else { values[best - 1].unwrap() };
        prop_assert!(!dir.improves(baseline, chosen));
        // with a negative baseline the sign of the percentage flips
        if baseline > 0.0 {
            let pct = percentage_change(baseline, chosen);
            prop_assert!(classify_outcome(pct, dir, f64::INFINITY) != OutcomeClass::Negative);
        }
    }

    #[test]
    fn classification_is_direction_symmetric(pct in -20000.0f64..20000.0, thr in 1.0f64..10000.0) {
        prop_assert_eq!(
            classify_outcome(pct, Direction::Minimize, thr),
            classify_outcome(-pct, Direction::Maximize, thr)
        );
    }
}

#[test]
fn reported_outcomes_classify_as_published() {
    assert_eq!(classify_outcome(-45.5, Direction::Minimize, 9999.0), OutcomeClass::Positive);
    assert_eq!(classify_outcome(2042.6, Direction::Minimize, 9999.0), OutcomeClass::Negative);
    assert_eq!(classify_outcome(10000.0, Direction::Minimize, 9999.0), OutcomeClass::Extreme);
    assert_eq!(classify_outcome(0.0, Direction::Maximize, 9999.0), OutcomeClass::Zero);
}

/// Wraps a proposer and records every input it is shown.
struct Recording<P> {
    inner: P,
    seen: Mutex<Vec<Vec<u8>>>,
}

impl<P: Proposer> Proposer for Recording<P> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn analyze(&self, input: &ProposerInput) -> Result<String, AgentError> {
        self.seen.lock().unwrap().push(input.canonical_bytes());
        self.inner.analyze(input)
    }

    fn modify(&self, input: &ProposerInput, instructions: &str) -> Result<String, AgentError> {
        self.inner.modify(input, instructions)
    }
}

#[test]
fn proposer_inputs_do_not_depend_on_iteration_order() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path());
    let mode = ModificationMode::ManualPatch;

    let forward = Recording { inner: RandomPerturb::new(5), seen: Mutex::new(Vec::new()) };
    let session = Session::prepare(&spec, &tmp.path().join("forward"), &forward, options(7, mode)).unwrap();
    let records: Vec<_> = (1..=7).map(|i| session.run_iteration(i).unwrap()).collect();
    let forward_result = session.finish(records).unwrap();

    let shuffled = Recording { inner: RandomPerturb::new(5), seen: Mutex::new(Vec::new()) };
    let session = Session::prepare(&spec, &tmp.path().join("shuffled"), &shuffled, options(7, mode)).unwrap();
    let mut order: Vec<usize> = (1..=7).collect();
    order.shuffle(&mut common::rng(99));
    let mut records: Vec<_> = order.iter().map(|&i| session.run_iteration(i).unwrap()).collect();
    records.sort_by_key(|r| r.index);
    let shuffled_result = session.finish(records).unwrap();

    let mut a = forward.seen.into_inner().unwrap();
    let mut b = shuffled.seen.into_inner().unwrap();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    assert_eq!(forward_result.best_index, shuffled_result.best_index);
    for (x, y) in forward_result.iterations.iter().zip(&shuffled_result.iterations) {
        assert_eq!(x.proposal, y.proposal);
        assert_eq!(x.objective_value(), y.objective_value());
    }
}

#[test]
fn workdir_holds_the_full_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path());
    let work = tmp.path().join("run");
    let result = run_optimization(&spec, &work, &RandomPerturb::new(3), options(7, ModificationMode::WholeCode)).unwrap();

    assert_eq!(fs::read_to_string(work.join("spec.spec")).unwrap(), SPEC);
    assert!(work.join("report_0.csv").exists());
    for i in 1..=7 {
        assert!(work.join(format!("instruction_{i}.md")).exists());
        assert!(work.join(format!("candidate_{i}.spec")).exists());
        assert!(work.join(format!("report_{i}.csv")).exists());
    }
    let log = fs::read_to_string(work.join(RESULT_FILE)).unwrap();
    let lines: Vec<&str> = log.lines().filter(|l| !l.starts_with("WARN")).collect();
    assert!(lines[0].starts_with("BASELINE objective="));
    for (i, line) in lines.iter().enumerate().take(8).skip(1) {
        assert!(line.starts_with(&format!("ITER {i} success")), "{line}");
    }
    assert_eq!(
        *lines.last().unwrap(),
        format!(
            "BEST index={} pct={} class={}",
            result.best_index, result.percentage_change, result.outcome_class
        )
    );
    // the chosen value is never worse than the baseline
    assert!(result.best_value <= result.baseline.objective_value);

    // a second run into the same workdir is refused
    assert!(run_optimization(&spec, &work, &NullProposer, options(1, ModificationMode::WholeCode)).is_err());
}

/// Emits a diff whose context does not match the original spec.
struct Mismatched;

impl Proposer for Mismatched {
    fn name(&self) -> String {
        "mismatched".into()
    }

    fn analyze(&self, _input: &ProposerInput) -> Result<String, AgentError> {
        Ok("raise alpha\n".into())
    }

    fn modify(&self, input: &ProposerInput, _instructions: &str) -> Result<String, AgentError> {
        if input.iteration.is_multiple_of(2) {
            Ok("--- a/spec.spec\n+++ b/spec.spec\n@@ -4,2 +4,2 @@\n reward_model.kind = kernel\n-reward_model.alpha = 1.0\n+reward_model.alpha = 2.0\n".into())
        } else {
            Ok("--- a/spec.spec\n+++ b/spec.spec\n@@ -4,2 +4,2 @@\n reward_model.kind = tabular\n-reward_model.alpha = 1.0\n+reward_model.alpha = 2.0\n".into())
        }
    }
}

#[test]
fn mismatched_context_fails_the_iteration_not_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path());
    let work = tmp.path().join("run");
    let result = run_optimization(&spec, &work, &Mismatched, options(4, ModificationMode::ManualPatch)).unwrap();
    for r in &result.iterations {
        match (&r.outcome, r.index % 2) {
            (IterationOutcome::Failure(c), 0) => {
                assert_eq!(c.kind, FailureKind::SyntaxCodeError);
                assert!(c.detail.contains("context mismatch"), "{}", c.detail);
            }
            (IterationOutcome::Success(_), 1) => {}
            (o, _) => panic!("iteration {} unexpected {o:?}", r.index),
        }
    }
    let log = fs::read_to_string(work.join(RESULT_FILE)).unwrap();
    assert!(log.contains("ITER 2 failed objective=NA pct=NA\nFAIL syntax_code_error context mismatch"));
    assert!(log.lines().last().unwrap().starts_with("BEST index="));
}

#[test]
fn random_perturb_is_reproducible_per_seed() {
    let mut rng = common::rng(8);
    for _ in 0..5 {
        let seed: u64 = rng.random();
        let input = ProposerInput {
            spec_text: SPEC.into(),
            baseline_report: String::new(),
            iteration: rng.random_range(1..=7),
            mode: ModificationMode::WholeCode,
        };
        let p = RandomPerturb::new(seed);
        let a = p.modify(&input, &p.analyze(&input).unwrap()).unwrap();
        let b = p.modify(&input, &p.analyze(&input).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, SPEC);
    }
}
