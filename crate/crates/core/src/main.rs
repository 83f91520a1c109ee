use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use opeforge::batch::{parse_objective, read_runs_csv, run_batch, summarize, summary_to_csv, BatchPlan};
use opeforge::cache::ArtifactCache;
use opeforge::estimators::Objective;
use opeforge::experiment::{load_artifacts, run_experiment};
use opeforge::optimizer::llm::LlmConfig;
use opeforge::optimizer::{
    run_optimization, OptimizeError, ProposerBinding, RunOptions, DEFAULT_EXTREME_THRESHOLD, DEFAULT_ITERATIONS,
};
use opeforge::patch::{classify_failure, FailureClass, FailureKind, FuzzOptions, ModificationMode, RunDiagnostics};
use opeforge::spec::{check_guardrails, parse_spec, ExperimentSpec, Severity};

#[derive(Parser)]
#[command(name = "opeforge", version, about = "Off-policy evaluation experiments and spec optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the logged dataset of a spec and print the exact target value.
    GenerateData {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Evaluate the selected estimators and print the report CSV.
    Evaluate {
        spec: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Objective as `metric(estimator)[:direction]`.
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        strict_guardrails: bool,
    },
    /// Run the iterative optimization loop into a workdir.
    Optimize {
        spec: PathBuf,
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        iterations: usize,
        /// whole_code, manual_patch or agent_applies
        #[arg(long, default_value = "whole_code")]
        mode: String,
        /// null, random_perturb[:scale], grid=<path> or llm
        #[arg(long, default_value = "null")]
        proposer: String,
        #[arg(long)]
        objective: Option<String>,
        #[arg(long, default_value_t = DEFAULT_EXTREME_THRESHOLD)]
        extreme_threshold: f64,
        #[arg(long)]
        strict_guardrails: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Context lines agent_applies may ignore per hunk end.
        #[arg(long, default_value_t = FuzzOptions::default().fuzz)]
        fuzz: usize,
        /// Lines agent_applies searches around each hunk.
        #[arg(long, default_value_t = FuzzOptions::default().window)]
        window: usize,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        analyzer_prompt: Option<PathBuf>,
        #[arg(long)]
        coder_prompt: Option<PathBuf>,
    },
    /// Execute a batch plan (TOML) and write runs.csv and summary.csv.
    Batch {
        plan: PathBuf,
        /// Overrides the plan's concurrency.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Recompute the summary table from a runs.csv.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure with its exit code: 2 invalid input, 3 run failure,
/// 4 infrastructure.
struct Exit {
    code: u8,
    message: String,
}

impl Exit {
    fn invalid(e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: format!("error: {e}"),
        }
    }

    fn run(e: impl std::fmt::Display) -> Self {
        Self {
            code: 3,
            message: format!("error: {e}"),
        }
    }

    fn classified(class: &FailureClass, code: u8) -> Self {
        Self {
            code,
            message: class.log_line(),
        }
    }
}

impl From<anyhow::Error> for Exit {
    fn from(e: anyhow::Error) -> Self {
        Exit::run(format!("{e:#}"))
    }
}

fn code_for(kind: FailureKind) -> u8 {
    match kind {
        FailureKind::Infrastructure => 4,
        FailureKind::SyntaxCodeError | FailureKind::FileCorruption => 2,
        FailureKind::RuntimeIncompat => 3,
    }
}

fn load_spec(path: &Path) -> Result<ExperimentSpec, Exit> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(|e| Exit::invalid(format!("{e:#}")))?;
    parse_spec(&text).map_err(|e| {
        let class = classify_failure(&RunDiagnostics::Spec(e));
        Exit::classified(&class, code_for(class.kind))
    })
}

fn open_cache(dir: Option<&Path>) -> Result<Option<ArtifactCache>, Exit> {
    dir.map(|d| {
        ArtifactCache::open(d)
            .with_context(|| format!("cannot open cache {}", d.display()))
            .map_err(|e| Exit::invalid(format!("{e:#}")))
    })
    .transpose()
}

fn parse_objective_flag(flag: Option<&str>) -> Result<Option<Objective>, Exit> {
    flag.map(|o| parse_objective(o).map_err(Exit::invalid)).transpose()
}

fn write_out(path: &Path, contents: &str) -> Result<(), Exit> {
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Exit::from)
}

fn print(text: &str) -> Result<(), Exit> {
    io::stdout().write_all(text.as_bytes()).context("stdout").map_err(Exit::from)
}

fn run(cli: Cli) -> Result<(), Exit> {
    match cli.command {
        Command::GenerateData { spec, out, cache_dir } => {
            let spec = load_spec(&spec)?;
            let cache = open_cache(cache_dir.as_deref())?;
            let artifacts = load_artifacts(&spec, cache.as_ref()).map_err(|e| {
                let class = classify_failure(&RunDiagnostics::Run(e));
                Exit::classified(&class, code_for(class.kind))
            })?;
            write_out(&out, &artifacts.dataset.to_csv_string())?;
            print(&format!(
                "rows={}\nground_truth={}\n",
                artifacts.dataset.len(),
                artifacts.ground_truth
            ))
        }
        Command::Evaluate {
            spec,
            out,
            cache_dir,
            objective,
            strict_guardrails,
        } => {
            let mut spec = load_spec(&spec)?;
            if let Some(o) = parse_objective_flag(objective.as_deref())? {
                spec.objective = o;
                spec.estimators.insert(o.metric.estimator());
            }
            let cache = open_cache(cache_dir.as_deref())?;
            let findings = check_guardrails(&spec, strict_guardrails);
            for f in &findings {
                eprintln!("WARN guardrail {} {}={}", f.rule, f.key, f.value);
            }
            if findings.iter().any(|f| f.severity == Severity::Reject) {
                let class = classify_failure(&RunDiagnostics::Guardrail(findings));
                return Err(Exit::classified(&class, 3));
            }
            let report = run_experiment(&spec, cache.as_ref()).map_err(|e| {
                let class = classify_failure(&RunDiagnostics::Run(e));
                Exit::classified(&class, code_for(class.kind))
            })?;
            let csv = report.to_csv_string();
            if let Some(out) = out {
                write_out(&out, &csv)?;
            }
            print(&csv)
        }
        Command::Optimize {
            spec,
            workdir,
            iterations,
            mode,
            proposer,
            objective,
            extreme_threshold,
            strict_guardrails,
            seed,
            fuzz,
            window,
            cache_dir,
            analyzer_prompt,
            coder_prompt,
        } => {
            let mode = match mode.parse::<ModificationMode>().map_err(Exit::invalid)? {
                ModificationMode::AgentApplies(_) => ModificationMode::AgentApplies(FuzzOptions { fuzz, window }),
                other => other,
            };
            let binding: ProposerBinding = proposer.parse().map_err(Exit::invalid)?;
            let llm = match binding {
                ProposerBinding::Llm => Some(
                    LlmConfig::from_env()
                        .and_then(|c| c.with_prompt_files(analyzer_prompt.as_deref(), coder_prompt.as_deref()))
                        .map_err(Exit::invalid)?,
                ),
                _ => None,
            };
            let proposer = binding.build(seed, llm.as_ref()).map_err(Exit::invalid)?;
            let options = RunOptions {
                iterations,
                mode,
                objective: parse_objective_flag(objective.as_deref())?,
                extreme_threshold,
                strict_guardrails,
                cache: open_cache(cache_dir.as_deref())?,
            };
            match run_optimization(&spec, &workdir, proposer.as_ref(), options) {
                Ok(result) => print(&format!(
                    "best_index={} pct={} class={} failed_iterations={}\n",
                    result.best_index,
                    result.percentage_change,
                    result.outcome_class,
                    result.iterations.iter().filter(|r| r.failure().is_some()).count()
                )),
                Err(OptimizeError::Baseline(class)) => Err(Exit::classified(&class, 3)),
                Err(OptimizeError::Spec(e)) => {
                    let class = classify_failure(&RunDiagnostics::Spec(e));
                    Err(Exit::classified(&class, 2))
                }
                Err(e) => Err(Exit::invalid(e)),
            }
        }
        Command::Batch { plan, jobs } => {
            let mut plan = BatchPlan::load(&plan).map_err(Exit::invalid)?;
            if let Some(j) = jobs {
                if j == 0 {
                    return Err(Exit::invalid("--jobs must be at least 1"));
                }
                plan.jobs = j;
            }
            let llm = if plan.proposers.contains(&ProposerBinding::Llm) {
                Some(LlmConfig::from_env().map_err(Exit::invalid)?)
            } else {
                None
            };
            let outcome = run_batch(&plan, llm.as_ref()).map_err(|e| Exit::run(anyhow!(e)))?;
            eprintln!(
                "{} runs, results in {} and {}",
                outcome.rows.len(),
                outcome.runs_csv.display(),
                outcome.summary_csv.display()
            );
            print(&summary_to_csv(&outcome.summary))
        }
        Command::Report { runs, out } => {
            let file = fs::File::open(&runs)
                .with_context(|| format!("cannot open {}", runs.display()))
                .map_err(|e| Exit::invalid(format!("{e:#}")))?;
            let rows = read_runs_csv(BufReader::new(file)).map_err(Exit::invalid)?;
            let csv = summary_to_csv(&summarize(&rows));
            if let Some(out) = out {
                write_out(&out, &csv)?;
            }
            print(&csv)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(exit) => {
            eprintln!("{}", exit.message);
            ExitCode::from(exit.code)
        }
    }
}
