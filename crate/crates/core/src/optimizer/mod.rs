//! The iterative optimization protocol.
//!
//! A run evaluates the original spec once (the baseline), then for each of
//! `n` iterations asks the proposer for instructions and a proposal, turns the
//! proposal into a candidate spec under the selected [`ModificationMode`],
//! and evaluates it. Every iteration sees only the original spec and the
//! baseline report, never earlier iterations. The best configuration is picked
//! by direct comparison of objective values, with the baseline always among
//! the choices.
//!
//! Workdir layout:
//!
//! ```text
//! spec.spec            original spec
//! report_0.csv         baseline report
//! instruction_<i>.md   analyzer output
//! candidate_<i>.spec   candidate document (absent if the modifier failed)
//! report_<i>.csv       candidate report (successful iterations only)
//! result.txt           append-only run log
//! ```

pub mod llm;
pub mod proposer;

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use thiserror::Error;

use crate::cache::ArtifactCache;
use crate::estimators::{Direction, EstimatorReport, Objective};
use crate::experiment::run_experiment;
use crate::patch::{apply_proposal, classify_failure, FailureClass, ModificationMode, RunDiagnostics};
use crate::spec::{check_guardrails, parse_spec, ExperimentSpec, Severity, SpecError};

pub use proposer::{AgentError, GridProposer, NullProposer, Proposer, ProposerBinding, ProposerInput, RandomPerturb};

pub const DEFAULT_ITERATIONS: usize = 7;
pub const DEFAULT_EXTREME_THRESHOLD: f64 = 9999.0;
pub const RESULT_FILE: &str = "result.txt";
pub const SPEC_FILE: &str = "spec.spec";

/// `((best - baseline) / baseline) * 100`, or exactly `0.0` when the
/// baseline is zero.
pub fn percentage_change(baseline: f64, best: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        (best - baseline) / baseline * 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OutcomeClass {
    Positive,
    Zero,
    Negative,
    Extreme,
    Failed,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 5] = [
        OutcomeClass::Positive,
        OutcomeClass::Zero,
        OutcomeClass::Negative,
        OutcomeClass::Extreme,
        OutcomeClass::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeClass::Positive => "positive",
            OutcomeClass::Zero => "zero",
            OutcomeClass::Negative => "negative",
            OutcomeClass::Extreme => "extreme",
            OutcomeClass::Failed => "failed",
        }
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutcomeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OutcomeClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown outcome class '{s}'"))
    }
}

/// Extreme when `|pct| > threshold`, zero when `pct == 0`, otherwise positive
/// if the change is an improvement under `direction` (a decrease when
/// minimizing, an increase when maximizing) and negative if not.
pub fn classify_outcome(pct: f64, direction: Direction, extreme_threshold: f64) -> OutcomeClass {
    if pct.abs() > extreme_threshold {
        OutcomeClass::Extreme
    } else if pct == 0.0 {
        OutcomeClass::Zero
    } else if direction.improves(pct, 0.0) {
        OutcomeClass::Positive
    } else {
        OutcomeClass::Negative
    }
}

/// Index of the best value among the baseline (index 0) and the successful
/// iterations (`iterations[i - 1]`, `None` for failures). Ties go to the
/// lowest index.
pub fn select_best(baseline: f64, iterations: &[Option<f64>], direction: Direction) -> usize {
    let mut best = (0, baseline);
    for (i, value) in iterations.iter().enumerate() {
        if let Some(v) = *value {
            if direction.improves(v, best.1) {
                best = (i + 1, v);
            }
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub enum IterationOutcome {
    Success(EstimatorReport),
    Failure(FailureClass),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub index: usize,
    pub instructions: String,
    /// `None` when the proposer failed before producing a proposal.
    pub proposal: Option<String>,
    pub mode: ModificationMode,
    pub outcome: IterationOutcome,
    pub instruction_file: PathBuf,
    pub candidate_file: Option<PathBuf>,
    pub report_file: Option<PathBuf>,
}

impl IterationRecord {
    pub fn objective_value(&self) -> Option<f64> {
        match &self.outcome {
            IterationOutcome::Success(r) => Some(r.objective_value),
            IterationOutcome::Failure(_) => None,
        }
    }

    pub fn failure(&self) -> Option<&FailureClass> {
        match &self.outcome {
            IterationOutcome::Success(_) => None,
            IterationOutcome::Failure(f) => Some(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub baseline: EstimatorReport,
    pub iterations: Vec<IterationRecord>,
    pub best_index: usize,
    pub best_value: f64,
    pub percentage_change: f64,
    pub outcome_class: OutcomeClass,
}

impl OptimizationResult {
    pub fn objective(&self) -> Objective {
        self.baseline.objective
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub iterations: usize,
    pub mode: ModificationMode,
    /// Overrides the spec's objective for the baseline and every candidate.
    pub objective: Option<Objective>,
    pub extreme_threshold: f64,
    pub strict_guardrails: bool,
    pub cache: Option<ArtifactCache>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            mode: ModificationMode::WholeCode,
            objective: None,
            extreme_threshold: DEFAULT_EXTREME_THRESHOLD,
            strict_guardrails: false,
            cache: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid spec: {0}")]
    Spec(#[from] SpecError),
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("workdir {} already holds a run", .0.display())]
    WorkdirInUse(PathBuf),
    #[error("baseline evaluation failed: {0}")]
    Baseline(FailureClass),
}

impl OptimizeError {
    /// The failure class for errors that stem from the experiment itself.
    pub fn failure_class(&self) -> Option<&FailureClass> {
        match self {
            OptimizeError::Baseline(c) => Some(c),
            _ => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OptimizeError + '_ {
    move |source| OptimizeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sets the objective and makes sure its estimator is evaluated.
fn with_objective(mut spec: ExperimentSpec, objective: Objective) -> ExperimentSpec {
    spec.objective = objective;
    spec.estimators.insert(objective.metric.estimator());
    spec
}

/// A prepared run: baseline evaluated and logged, iterations pending.
pub struct Session<'a> {
    workdir: PathBuf,
    original_text: String,
    baseline: EstimatorReport,
    baseline_csv: String,
    objective: Objective,
    options: RunOptions,
    proposer: &'a dyn Proposer,
}

impl<'a> Session<'a> {
    /// Reads the spec, creates the workdir, evaluates and logs the baseline.
    pub fn prepare(
        spec_path: &Path,
        workdir: &Path,
        proposer: &'a dyn Proposer,
        options: RunOptions,
    ) -> Result<Self, OptimizeError> {
        if options.iterations < 1 {
            return Err(OptimizeError::NoIterations);
        }
        let original_text = fs::read_to_string(spec_path).map_err(io_err(spec_path))?;
        let spec = parse_spec(&original_text)?;
        fs::create_dir_all(workdir).map_err(io_err(workdir))?;
        let result_path = workdir.join(RESULT_FILE);
        if result_path.exists() {
            return Err(OptimizeError::WorkdirInUse(workdir.to_path_buf()));
        }
        let spec_copy = workdir.join(SPEC_FILE);
        fs::write(&spec_copy, &original_text).map_err(io_err(&spec_copy))?;

        let objective = options.objective.unwrap_or(spec.objective);
        let spec = with_objective(spec, objective);
        let mut session = Self {
            workdir: workdir.to_path_buf(),
            original_text,
            baseline: EstimatorReport {
                rows: Vec::new(),
                ground_truth: f64::NAN,
                objective,
                objective_value: f64::NAN,
            },
            baseline_csv: String::new(),
            objective,
            options,
            proposer,
        };
        match session.evaluate(&spec) {
            Ok(report) => {
                session.baseline_csv = report.to_csv_string();
                session.write("report_0.csv", &session.baseline_csv)?;
                session.log(&[format!("BASELINE objective={}", report.objective_value)])?;
                session.baseline = report;
                Ok(session)
            }
            Err(diag) => {
                let class = classify_failure(&diag);
                session.log(&[
                    "BASELINE failed objective=NA".to_string(),
                    class.log_line(),
                    format!("BEST index=0 pct=NA class={}", OutcomeClass::Failed),
                ])?;
                Err(OptimizeError::Baseline(class))
            }
        }
    }

    pub fn baseline(&self) -> &EstimatorReport {
        &self.baseline
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, OptimizeError> {
        let path = self.workdir.join(name);
        fs::write(&path, contents).map_err(io_err(&path))?;
        Ok(path)
    }

    fn log(&self, lines: &[String]) -> Result<(), OptimizeError> {
        let path = self.workdir.join(RESULT_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut text = String::new();
        for l in lines {
            text.push_str(l);
            text.push('\n');
        }
        f.write_all(text.as_bytes()).map_err(io_err(&path))
    }

    /// Guardrails, then the experiment. Warnings are logged.
    fn evaluate(&self, spec: &ExperimentSpec) -> Result<EstimatorReport, RunDiagnostics> {
        let findings = check_guardrails(spec, self.options.strict_guardrails);
        if findings.iter().any(|f| f.severity == Severity::Reject) {
            return Err(RunDiagnostics::Guardrail(findings));
        }
        let warnings: Vec<String> = findings.iter().map(|f| format!("WARN guardrail {} {}={}", f.rule, f.key, f.value)).collect();
        if !warnings.is_empty() {
            // a logging failure surfaces on the next log call
            let _ = self.log(&warnings);
        }
        run_experiment(spec, self.options.cache.as_ref()).map_err(RunDiagnostics::Run)
    }

    /// The proposer input for iteration `i`; depends only on the original
    /// spec, the baseline report, the mode and `i`.
    pub fn proposer_input(&self, i: usize) -> ProposerInput {
        ProposerInput {
            spec_text: self.original_text.clone(),
            baseline_report: self.baseline_csv.clone(),
            iteration: i,
            mode: self.options.mode,
        }
    }

    /// Runs iteration `i`, writing its files and appending to result.txt.
    pub fn run_iteration(&self, i: usize) -> Result<IterationRecord, OptimizeError> {
        let input = self.proposer_input(i);
        let mode = self.options.mode;
        let instruction_name = format!("instruction_{i}.md");
        let mut record = IterationRecord {
            index: i,
            instructions: String::new(),
            proposal: None,
            mode,
            outcome: IterationOutcome::Failure(FailureClass::new(crate::patch::FailureKind::SyntaxCodeError, "")),
            instruction_file: self.workdir.join(&instruction_name),
            candidate_file: None,
            report_file: None,
        };

        let outcome = self.iteration_outcome(&input, &mut record)?;
        let lines = match &outcome {
            IterationOutcome::Success(report) => {
                let pct = percentage_change(self.baseline.objective_value, report.objective_value);
                vec![format!("ITER {i} success objective={} pct={pct}", report.objective_value)]
            }
            IterationOutcome::Failure(class) => {
                vec![format!("ITER {i} failed objective=NA pct=NA"), class.log_line()]
            }
        };
        info!("iteration {i}: {}", lines[0]);
        record.outcome = outcome;
        self.log(&lines)?;
        Ok(record)
    }

    fn iteration_outcome(
        &self,
        input: &ProposerInput,
        record: &mut IterationRecord,
    ) -> Result<IterationOutcome, OptimizeError> {
        let i = input.iteration;
        let fail = |diag: RunDiagnostics| IterationOutcome::Failure(classify_failure(&diag));
        let agent = |e: AgentError| match e {
            AgentError::Transport(m) => RunDiagnostics::Transport(m),
            other => RunDiagnostics::EmptyResponse(other.to_string()),
        };

        let instructions = match self.proposer.analyze(input) {
            Ok(text) => text,
            Err(e) => {
                self.write(&format!("instruction_{i}.md"), &format!("analyzer failed: {e}\n"))?;
                return Ok(fail(agent(e)));
            }
        };
        self.write(&format!("instruction_{i}.md"), &instructions)?;
        record.instructions = instructions.clone();

        let proposal = match self.proposer.modify(input, &instructions) {
            Ok(p) => p,
            Err(e) => return Ok(fail(agent(e))),
        };
        record.proposal = Some(proposal.clone());

        let candidate_name = format!("candidate_{i}.spec");
        let candidate = match apply_proposal(input.mode, &self.original_text, &proposal) {
            Ok(text) => text,
            Err(e) => {
                // keep the raw proposal for inspection
                record.candidate_file = Some(self.write(&candidate_name, &proposal)?);
                return Ok(fail(RunDiagnostics::Patch(e)));
            }
        };
        record.candidate_file = Some(self.write(&candidate_name, &candidate)?);

        let spec = match parse_spec(&candidate) {
            Ok(s) => with_objective(s, self.objective),
            Err(e) => return Ok(fail(RunDiagnostics::Spec(e))),
        };
        match self.evaluate(&spec) {
            Ok(report) => {
                record.report_file = Some(self.write(&format!("report_{i}.csv"), &report.to_csv_string())?);
                Ok(IterationOutcome::Success(report))
            }
            Err(diag) => Ok(fail(diag)),
        }
    }

    /// Picks the best configuration and logs the `BEST` line.
    pub fn finish(self, iterations: Vec<IterationRecord>) -> Result<OptimizationResult, OptimizeError> {
        let values: Vec<Option<f64>> = iterations.iter().map(|r| r.objective_value()).collect();
        let base = self.baseline.objective_value;
        let best_index = select_best(base, &values, self.objective.direction);
        let best_value = if best_index == 0 {
            base
        } else {
            values[best_index - 1].expect("best index points at a success")
        };
        let pct = percentage_change(base, best_value);
        let class = classify_outcome(pct, self.objective.direction, self.options.extreme_threshold);
        self.log(&[format!("BEST index={best_index} pct={pct} class={class}")])?;
        Ok(OptimizationResult {
            baseline: self.baseline,
            iterations,
            best_index,
            best_value,
            percentage_change: pct,
            outcome_class: class,
        })
    }
}

/// Runs the whole protocol into `workdir`.
pub fn run_optimization(
    spec_path: &Path,
    workdir: &Path,
    proposer: &dyn Proposer,
    options: RunOptions,
) -> Result<OptimizationResult, OptimizeError> {
    let n = options.iterations;
    let session = Session::prepare(spec_path, workdir, proposer, options)?;
    let records = (1..=n)
        .map(|i| session.run_iteration(i))
        .collect::<Result<Vec<_>, _>>()?;
    session.finish(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentage_examples() {
        assert_eq!(percentage_change(0.2, 0.1), -50.0);
        assert_eq!(percentage_change(0.0, 0.7), 0.0);
        assert!((percentage_change(0.001, 1.0) - 99900.0).abs() < 1e-9);
    }

    #[test]
    fn outcome_examples() {
        use Direction::*;
        assert_eq!(classify_outcome(-45.5, Minimize, 9999.0), OutcomeClass::Positive);
        assert_eq!(classify_outcome(99900.0, Minimize, 9999.0), OutcomeClass::Extreme);
        assert_eq!(classify_outcome(99900.0, Maximize, 9999.0), OutcomeClass::Extreme);
        assert_eq!(classify_outcome(2042.6, Minimize, 9999.0), OutcomeClass::Negative);
        assert_eq!(classify_outcome(0.0, Maximize, 9999.0), OutcomeClass::Zero);
        assert_eq!(classify_outcome(9999.0, Maximize, 9999.0), OutcomeClass::Positive);
    }

    #[test]
    fn selection_examples() {
        use Direction::*;
        assert_eq!(select_best(0.20, &[Some(0.25), Some(0.10), Some(0.10)], Minimize), 2);
        assert_eq!(select_best(0.20, &[None, None], Minimize), 0);
        assert_eq!(select_best(1.0, &[Some(1.0)], Maximize), 0);
    }

    #[test]
    fn null_run_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let spec_path = dir.path().join("in.spec");
        fs::write(&spec_path, ExperimentSpec::default().to_text()).unwrap();
        let work = dir.path().join("run");
        let result = run_optimization(&spec_path, &work, &NullProposer, RunOptions::default()).unwrap();
        assert_eq!(result.iterations.len(), 7);
        assert!(result
            .iterations
            .iter()
            .all(|r| r.objective_value() == Some(result.baseline.objective_value)));
        assert_eq!(result.best_index, 0);
        assert_eq!(result.percentage_change, 0.0);
        assert_eq!(result.outcome_class, OutcomeClass::Zero);
        let log = fs::read_to_string(work.join(RESULT_FILE)).unwrap();
        assert_eq!(log.lines().count(), 9);
        assert!(log.ends_with("BEST index=0 pct=0 class=zero\n"));
        // a second run into the same workdir is refused rather than appended
        assert!(matches!(
            run_optimization(&spec_path, &work, &NullProposer, RunOptions::default()),
            Err(OptimizeError::WorkdirInUse(_))
        ));
    }

    #[test]
    fn failed_baseline_is_classified() {
        let dir = tempfile::tempdir().unwrap();
        let spec_path = dir.path().join("in.spec");
        fs::write(
            &spec_path,
            "env.contexts = 1\nenv.actions = 2\nenv.q = 0.3, 0.7\nbehavior.kind = explicit\nbehavior.probs = 1, 0\ntarget.kind = explicit\ntarget.probs = 0, 1\nestimators.use = snipw\nobjective.metric = relative_ee(snipw)\n",
        )
        .unwrap();
        let err = run_optimization(&spec_path, &dir.path().join("w"), &NullProposer, RunOptions::default()).unwrap_err();
        let class = err.failure_class().unwrap();
        assert_eq!(class.kind, crate::patch::FailureKind::RuntimeIncompat);
        let log = fs::read_to_string(dir.path().join("w").join(RESULT_FILE)).unwrap();
        assert!(log.contains("FAIL runtime_incompat"));
        assert!(log.ends_with("class=failed\n"));
    }
}
