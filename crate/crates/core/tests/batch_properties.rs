use std::fs;
use std::io::Cursor;

use opeforge::batch::{read_runs_csv, run_batch, runs_to_csv, summarize, BatchPlan, RunRow};
use opeforge::optimizer::OutcomeClass;
use opeforge::patch::FailureKind;
use proptest::prelude::*;

fn row_strategy() -> impl Strategy<Value = RunRow> {
    (0usize..5, 0usize..3, 0usize..2, -500.0f64..500.0, 0usize..4).prop_map(|(c, p, m, pct, f)| {
        let class = OutcomeClass::ALL[c];
        let pct = match class {
            OutcomeClass::Failed => None,
            OutcomeClass::Zero => Some(0.0),
            OutcomeClass::Positive => Some(-pct.abs().max(0.1)),
            _ => Some(pct),
        };
        RunRow {
            scenario: "a.spec".into(),
            mode: ["whole_code", "manual_patch"][m].into(),
            proposer: ["null", "random_perturb", "llm"][p].into(),
            repeat: 0,
            pct,
            class,
            failure: pct.is_none().then_some(FailureKind::ALL[f]),
            best_index: pct.map(|_| 1),
            failed_iterations: f,
            runtime_secs: 0.5,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn summary_matches_recomputation(rows in prop::collection::vec(row_strategy(), 1..60)) {
        // the summary is computed from the CSV form, as `report` does
        let rows = read_runs_csv(Cursor::new(runs_to_csv(&rows))).unwrap();
        for s in summarize(&rows) {
            let group: Vec<&RunRow> = rows.iter().filter(|r| r.proposer == s.proposer && r.mode == s.mode).collect();
            prop_assert_eq!(s.runs, group.len());
            let total: f64 = s.proportions.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            let ok = group.iter().filter(|r| r.pct.is_some()).count() as f64 / group.len() as f64;
            prop_assert!((s.success_rate - ok).abs() < 1e-12);

            let mut gains: Vec<f64> = group
                .iter()
                .filter(|r| r.class == OutcomeClass::Positive)
                .map(|r| r.pct.unwrap().abs())
                .collect();
            gains.sort_by(f64::total_cmp);
            if gains.is_empty() {
                prop_assert!(s.avg_improvement.is_none() && s.median_improvement.is_none());
            } else {
                let avg = gains.iter().sum::<f64>() / gains.len() as f64;
                let k = gains.len();
                let median = if k % 2 == 1 { gains[k / 2] } else { (gains[k / 2 - 1] + gains[k / 2]) / 2.0 };
                prop_assert!((s.avg_improvement.unwrap() - avg).abs() < 1e-9);
                prop_assert!((s.median_improvement.unwrap() - median).abs() < 1e-9);
            }
            for (k, kind) in FailureKind::ALL.into_iter().enumerate() {
                prop_assert_eq!(s.failures[k], group.iter().filter(|r| r.failure == Some(kind)).count());
            }
        }
    }
}

fn strip_runtime(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect()
}

#[test]
fn seeded_batches_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("a.spec"), "env.contexts = 3\ndata.n = 300\n").unwrap();
    fs::write(tmp.path().join("b.spec"), "env.actions = 3\ndata.n = 250\nreward_model.kind = kernel\n").unwrap();
    let plan = |root: &str| {
        BatchPlan::parse(
            &format!(
                "scenarios = [\"a.spec\", \"b.spec\"]\nmodes = [\"whole_code\", \"agent_applies\"]\n\
                 proposers = [\"null\", \"random_perturb:3\"]\nrepeats = 2\nbase_seed = 4\n\
                 workroot = \"{root}\"\niterations = 3\njobs = 4\n"
            ),
            tmp.path(),
        )
        .unwrap()
    };
    let first = run_batch(&plan("one"), None).unwrap();
    let second = run_batch(&plan("two"), None).unwrap();
    assert_eq!(first.rows.len(), 16);
    assert_eq!(strip_runtime(&runs_to_csv(&first.rows)), strip_runtime(&runs_to_csv(&second.rows)));
    assert!(first.rows.iter().all(|r| r.pct.is_some()));
    assert!(first
        .rows
        .iter()
        .filter(|r| r.proposer == "null")
        .all(|r| r.class == OutcomeClass::Zero));
}
