//! Batch execution of optimization runs and outcome aggregation.
//!
//! A plan crosses scenarios (spec files) with modification modes, proposers
//! and repeats. Each run gets its own workdir under the plan's `workroot`;
//! results go to `runs.csv` (one row per run) and `summary.csv` (one row per
//! proposer and mode).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::cache::ArtifactCache;
use crate::estimators::Objective;
use crate::optimizer::llm::LlmConfig;
use crate::optimizer::{
    run_optimization, AgentError, OptimizeError, OutcomeClass, ProposerBinding, RunOptions,
    DEFAULT_EXTREME_THRESHOLD, DEFAULT_ITERATIONS,
};
use crate::patch::{classify_failure, FailureKind, FuzzOptions, ModificationMode, RunDiagnostics};

pub const RUNS_CSV_HEADER: &str =
    "scenario,mode,proposer,repeat,status,pct,class,failure,best_index,failed_iterations,runtime_secs";
pub const SUMMARY_CSV_HEADER: &str = "proposer,mode,runs,success_rate,positive,zero,negative,extreme,failed,avg_improvement,median_improvement,syntax_code_error,file_corruption,infrastructure,runtime_incompat";

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("malformed runs csv at line {line}: {detail}")]
    Csv { line: usize, detail: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    scenarios: Vec<PathBuf>,
    modes: Vec<String>,
    proposers: Vec<String>,
    #[serde(default = "one")]
    repeats: usize,
    #[serde(default)]
    base_seed: u64,
    workroot: PathBuf,
    #[serde(default = "default_iterations")]
    iterations: usize,
    #[serde(default = "one")]
    jobs: usize,
    #[serde(default)]
    strict_guardrails: bool,
    #[serde(default = "default_threshold")]
    extreme_threshold: f64,
    objective: Option<String>,
    cache_dir: Option<PathBuf>,
    fuzz: Option<usize>,
    window: Option<usize>,
}

fn one() -> usize {
    1
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

fn default_threshold() -> f64 {
    DEFAULT_EXTREME_THRESHOLD
}

/// A validated batch plan. Relative paths are resolved against the plan
/// file's directory.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub scenarios: Vec<PathBuf>,
    pub modes: Vec<ModificationMode>,
    pub proposers: Vec<ProposerBinding>,
    pub repeats: usize,
    pub base_seed: u64,
    pub workroot: PathBuf,
    pub iterations: usize,
    pub jobs: usize,
    pub strict_guardrails: bool,
    pub extreme_threshold: f64,
    pub objective: Option<Objective>,
    pub cache_dir: Option<PathBuf>,
}

impl BatchPlan {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, BatchError> {
        let raw: PlanFile = toml::from_str(text).map_err(|e| BatchError::Plan(e.to_string()))?;
        let plan_err = |m: String| BatchError::Plan(m);
        if raw.scenarios.is_empty() || raw.modes.is_empty() || raw.proposers.is_empty() {
            return Err(plan_err("scenarios, modes and proposers must be non-empty".into()));
        }
        if raw.repeats < 1 || raw.iterations < 1 || raw.jobs < 1 {
            return Err(plan_err("repeats, iterations and jobs must be at least 1".into()));
        }
        let fuzz = FuzzOptions {
            fuzz: raw.fuzz.unwrap_or(FuzzOptions::default().fuzz),
            window: raw.window.unwrap_or(FuzzOptions::default().window),
        };
        let modes = raw
            .modes
            .iter()
            .map(|m| {
                m.parse::<ModificationMode>().map(|mode| match mode {
                    ModificationMode::AgentApplies(_) => ModificationMode::AgentApplies(fuzz),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(plan_err)?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let proposers = raw
            .proposers
            .iter()
            .map(|p| {
                p.parse::<ProposerBinding>().map(|b| match b {
                    ProposerBinding::Grid(path) => ProposerBinding::Grid(resolve(&path)),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(plan_err)?;
        let scenarios: Vec<PathBuf> = raw.scenarios.iter().map(|p| resolve(p)).collect();
        for s in &scenarios {
            if s.to_string_lossy().contains(',') {
                return Err(plan_err(format!("scenario path contains a comma: {}", s.display())));
            }
        }
        for p in &proposers {
            if p.to_string().contains(',') {
                return Err(plan_err(format!("proposer contains a comma: {p}")));
            }
        }
        let objective = raw
            .objective
            .map(|o| parse_objective(&o))
            .transpose()
            .map_err(plan_err)?;
        Ok(Self {
            scenarios,
            modes,
            proposers,
            repeats: raw.repeats,
            base_seed: raw.base_seed,
            workroot: resolve(&raw.workroot),
            iterations: raw.iterations,
            jobs: raw.jobs,
            strict_guardrails: raw.strict_guardrails,
            extreme_threshold: raw.extreme_threshold,
            objective,
            cache_dir: raw.cache_dir.map(|p| resolve(&p)),
        })
    }

    pub fn load(path: &Path) -> Result<Self, BatchError> {
        let text = fs::read_to_string(path).map_err(|source| BatchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn total_runs(&self) -> usize {
        self.scenarios.len() * self.modes.len() * self.proposers.len() * self.repeats
    }
}

/// Parses `metric` or `metric:direction`, e.g. `relative_ee(ipw):minimize`.
/// Without a direction, `relative_ee` minimizes and the others maximize.
pub fn parse_objective(text: &str) -> Result<Objective, String> {
    use crate::estimators::{Direction, ObjectiveMetric};
    let (metric, direction) = match text.rsplit_once(':') {
        Some((m, d)) => (m, Some(d.parse::<Direction>()?)),
        None => (text, None),
    };
    let metric: ObjectiveMetric = metric.parse()?;
    let direction = direction.unwrap_or(match metric {
        ObjectiveMetric::RelativeEe(_) => Direction::Minimize,
        _ => Direction::Maximize,
    });
    Ok(Objective { metric, direction })
}

/// One line of `runs.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub scenario: String,
    pub mode: String,
    pub proposer: String,
    pub repeat: usize,
    /// `None` for failed runs.
    pub pct: Option<f64>,
    pub class: OutcomeClass,
    pub failure: Option<FailureKind>,
    pub best_index: Option<usize>,
    pub failed_iterations: usize,
    pub runtime_secs: f64,
}

impl RunRow {
    pub fn status(&self) -> &'static str {
        if self.class == OutcomeClass::Failed {
            "failed"
        } else {
            "ok"
        }
    }

    fn to_csv_line(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.scenario,
            self.mode,
            self.proposer,
            self.repeat,
            self.status(),
            opt(self.pct.map(|p| p.to_string())),
            self.class,
            opt(self.failure.map(|f| f.to_string())),
            opt(self.best_index.map(|b| b.to_string())),
            self.failed_iterations,
            self.runtime_secs
        )
    }
}

pub fn runs_to_csv(rows: &[RunRow]) -> String {
    let mut out = format!("{RUNS_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

fn non_empty(s: &str) -> Option<&str> {
    (!s.is_empty()).then_some(s)
}

pub fn read_runs_csv<R: BufRead>(input: R) -> Result<Vec<RunRow>, BatchError> {
    let mut rows = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let bad = |detail: String| BatchError::Csv { line: line_no, detail };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if idx == 0 {
            if line != RUNS_CSV_HEADER {
                return Err(bad("unexpected header".into()));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(bad(format!("expected 11 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number '{s}'")));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer '{s}'")));
        rows.push(RunRow {
            scenario: f[0].to_string(),
            mode: f[1].to_string(),
            proposer: f[2].to_string(),
            repeat: int(f[3])?,
            pct: non_empty(f[5]).map(num).transpose()?,
            class: f[6].parse().map_err(bad)?,
            failure: non_empty(f[7]).map(|s| s.parse::<FailureKind>()).transpose().map_err(bad)?,
            best_index: non_empty(f[8]).map(int).transpose()?,
            failed_iterations: int(f[9])?,
            runtime_secs: num(f[10])?,
        });
    }
    Ok(rows)
}

/// Aggregates for one (proposer, mode) group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub proposer: String,
    pub mode: String,
    pub runs: usize,
    pub success_rate: f64,
    /// Proportions in [`OutcomeClass::ALL`] order; they sum to 1.
    pub proportions: [f64; 5],
    /// Mean and median of `|pct|` over positive outcomes; `None` when there
    /// are none.
    pub avg_improvement: Option<f64>,
    pub median_improvement: Option<f64>,
    /// Failed-run counts in [`FailureKind::ALL`] order.
    pub failures: [usize; 4],
}

impl SummaryRow {
    pub fn proportion(&self, class: OutcomeClass) -> f64 {
        self.proportions[OutcomeClass::ALL.iter().position(|c| *c == class).expect("class listed")]
    }
}

/// Median of a non-empty list; the mean of the two middle values for even
/// lengths.
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Groups runs by (proposer, mode) in order of first appearance.
pub fn summarize(rows: &[RunRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.proposer.clone(), r.mode.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let runs = members.len();
            let count = |c: OutcomeClass| members.iter().filter(|r| r.class == c).count();
            let proportions = OutcomeClass::ALL.map(|c| count(c) as f64 / runs as f64);
            let mut improvements: Vec<f64> = members
                .iter()
                .filter(|r| r.class == OutcomeClass::Positive)
                .filter_map(|r| r.pct.map(f64::abs))
                .collect();
            let (avg, med) = if improvements.is_empty() {
                (None, None)
            } else {
                let avg = improvements.iter().sum::<f64>() / improvements.len() as f64;
                (Some(avg), Some(median(&mut improvements)))
            };
            let failures = FailureKind::ALL.map(|k| members.iter().filter(|r| r.failure == Some(k)).count());
            SummaryRow {
                proposer: key.0,
                mode: key.1,
                runs,
                success_rate: 1.0 - count(OutcomeClass::Failed) as f64 / runs as f64,
                proportions,
                avg_improvement: avg,
                median_improvement: med,
                failures,
            }
        })
        .collect()
}

pub fn summary_to_csv(summary: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_CSV_HEADER}\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in summary {
        let _ = write!(out, "{},{},{},{}", s.proposer, s.mode, s.runs, s.success_rate);
        for p in s.proportions {
            let _ = write!(out, ",{p}");
        }
        let _ = write!(out, ",{},{}", opt(s.avg_improvement), opt(s.median_improvement));
        for c in s.failures {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone)]
struct Job {
    scenario_index: usize,
    scenario: PathBuf,
    mode: ModificationMode,
    proposer: ProposerBinding,
    repeat: usize,
}

fn agent_failure(e: &AgentError) -> FailureKind {
    match e {
        AgentError::Transport(_) | AgentError::Config(_) => FailureKind::Infrastructure,
        AgentError::Empty(_) | AgentError::Invalid(_) => FailureKind::SyntaxCodeError,
    }
}

fn optimize_failure(e: &OptimizeError) -> FailureKind {
    match e {
        OptimizeError::Baseline(c) => c.kind,
        OptimizeError::Spec(e) => classify_failure(&RunDiagnostics::Spec(e.clone())).kind,
        OptimizeError::Io { .. } | OptimizeError::WorkdirInUse(_) | OptimizeError::NoIterations => {
            FailureKind::Infrastructure
        }
    }
}

fn run_job(plan: &BatchPlan, job: &Job, cache: Option<&ArtifactCache>, llm: Option<&LlmConfig>) -> RunRow {
    let started = Instant::now();
    let stem = job
        .scenario
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    let workdir = plan
        .workroot
        .join(format!("{:02}-{}", job.scenario_index, sanitize(&stem)))
        .join(job.mode.as_str())
        .join(sanitize(&job.proposer.to_string()))
        .join(format!("r{}", job.repeat));
    let mut row = RunRow {
        scenario: job.scenario.display().to_string(),
        mode: job.mode.to_string(),
        proposer: job.proposer.to_string(),
        repeat: job.repeat,
        pct: None,
        class: OutcomeClass::Failed,
        failure: None,
        best_index: None,
        failed_iterations: 0,
        runtime_secs: 0.0,
    };
    let seed = plan.base_seed.wrapping_add(job.repeat as u64);
    match job.proposer.build(seed, llm) {
        Err(e) => row.failure = Some(agent_failure(&e)),
        Ok(proposer) => {
            let options = RunOptions {
                iterations: plan.iterations,
                mode: job.mode,
                objective: plan.objective,
                extreme_threshold: plan.extreme_threshold,
                strict_guardrails: plan.strict_guardrails,
                cache: cache.cloned(),
            };
            match run_optimization(&job.scenario, &workdir, proposer.as_ref(), options) {
                Ok(result) => {
                    row.pct = Some(result.percentage_change);
                    row.class = result.outcome_class;
                    row.best_index = Some(result.best_index);
                    row.failed_iterations = result.iterations.iter().filter(|r| r.failure().is_some()).count();
                }
                Err(e) => {
                    log::warn!("run {} failed: {e}", workdir.display());
                    row.failure = Some(optimize_failure(&e));
                }
            }
        }
    }
    row.runtime_secs = started.elapsed().as_secs_f64();
    row
}

/// Results of a batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub rows: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
    pub runs_csv: PathBuf,
    pub summary_csv: PathBuf,
}

/// Executes every run of the plan, at most `plan.jobs` at a time, and writes
/// `runs.csv` and `summary.csv` into the workroot. Individual run failures are
/// recorded, never propagated.
pub fn run_batch(plan: &BatchPlan, llm: Option<&LlmConfig>) -> Result<BatchOutcome, BatchError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| BatchError::Io { path, source }
    };
    fs::create_dir_all(&plan.workroot).map_err(io_err(&plan.workroot))?;
    let cache = match &plan.cache_dir {
        Some(dir) => Some(ArtifactCache::open(dir).map_err(io_err(dir))?),
        None => None,
    };
    let mut jobs = Vec::with_capacity(plan.total_runs());
    for (scenario_index, scenario) in plan.scenarios.iter().enumerate() {
        for &mode in &plan.modes {
            for proposer in &plan.proposers {
                for repeat in 0..plan.repeats {
                    jobs.push(Job {
                        scenario_index,
                        scenario: scenario.clone(),
                        mode,
                        proposer: proposer.clone(),
                        repeat,
                    });
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs)
        .build()
        .map_err(|e| BatchError::Plan(format!("thread pool: {e}")))?;
    let rows: Vec<RunRow> = pool.install(|| jobs.par_iter().map(|j| run_job(plan, j, cache.as_ref(), llm)).collect());
    let summary = summarize(&rows);

    let runs_csv = plan.workroot.join("runs.csv");
    fs::write(&runs_csv, runs_to_csv(&rows)).map_err(io_err(&runs_csv))?;
    let summary_csv = plan.workroot.join("summary.csv");
    fs::write(&summary_csv, summary_to_csv(&summary)).map_err(io_err(&summary_csv))?;
    Ok(BatchOutcome {
        rows,
        summary,
        runs_csv,
        summary_csv,
    })
}
