//! Proposers: the analyzer role writes instructions, the modifier role turns
//! them into a concrete proposal (whole document or diff, per mode).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::llm::{LlmConfig, LlmProposer};
use crate::estimators::RewardModelKind;
use crate::patch::{diff, ModificationMode};
use crate::spec::{parse_spec, rewrite_text, BANDWIDTH_MIN, LEARNING_RATE_MAX};

/// Everything a proposer may look at for one iteration. Built only from the
/// original spec, the baseline report and the iteration number, never from
/// earlier iterations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposerInput {
    pub spec_text: String,
    pub baseline_report: String,
    pub iteration: usize,
    pub mode: ModificationMode,
}

impl ProposerInput {
    /// Stable byte encoding, used to compare inputs across runs.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        format!(
            "iteration={}\nmode={} fuzz={}\n--spec--\n{}--report--\n{}",
            self.iteration,
            self.mode,
            self.mode.fuzz(),
            self.spec_text,
            self.baseline_report
        )
        .into_bytes()
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    /// Connection failures, HTTP errors, timeouts.
    #[error("{0}")]
    Transport(String),
    #[error("empty response from {0}")]
    Empty(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("missing configuration: {0}")]
    Config(String),
}

pub trait Proposer: Send + Sync {
    fn name(&self) -> String;
    /// Produces modification instructions.
    fn analyze(&self, input: &ProposerInput) -> Result<String, AgentError>;
    /// Produces the proposal implementing `instructions`.
    fn modify(&self, input: &ProposerInput, instructions: &str) -> Result<String, AgentError>;
}

/// A key change made by an offline proposer.
#[derive(Debug, Clone, PartialEq)]
struct Change {
    key: String,
    old: Option<String>,
    new: String,
}

fn render_instructions(name: &str, iteration: usize, changes: &[Change]) -> String {
    let mut out = format!("# Iteration {iteration}\n\nProposer: {name}\n\n");
    if changes.is_empty() {
        out.push_str("No changes.\n");
        return out;
    }
    out.push_str("Changes:\n");
    for c in changes {
        match &c.old {
            Some(old) => out.push_str(&format!("- set {} from {} to {}\n", c.key, old, c.new)),
            None => out.push_str(&format!("- set {} to {}\n", c.key, c.new)),
        }
    }
    out
}

/// Whole document for `whole_code`, otherwise a diff of the original against
/// the rewritten document.
fn render_proposal(input: &ProposerInput, changes: &[Change]) -> String {
    let pairs: Vec<(String, String)> = changes.iter().map(|c| (c.key.clone(), c.new.clone())).collect();
    let candidate = rewrite_text(&input.spec_text, &pairs);
    if input.mode.expects_diff() {
        let d = diff(&input.spec_text, &candidate);
        if d.is_empty() {
            String::new()
        } else {
            d.with_paths("spec.spec").to_string()
        }
    } else {
        candidate
    }
}

fn current_value(text: &str, key: &str) -> Option<String> {
    text.lines().find_map(|line| {
        let (k, v) = line.split_once('=')?;
        (k.trim() == key && !line.trim_start().starts_with('#')).then(|| v.trim().to_string())
    })
}

/// Proposes no change; every candidate equals the original.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullProposer;

impl Proposer for NullProposer {
    fn name(&self) -> String {
        "null".into()
    }

    fn analyze(&self, input: &ProposerInput) -> Result<String, AgentError> {
        Ok(render_instructions(&self.name(), input.iteration, &[]))
    }

    fn modify(&self, input: &ProposerInput, _instructions: &str) -> Result<String, AgentError> {
        Ok(render_proposal(input, &[]))
    }
}

/// Multiplies each numeric reward-model hyperparameter (and a finite weight
/// cap) by a factor drawn log-uniformly from `[1/scale, scale]`, then clamps
/// kernel settings into the guardrail bounds. Iteration `i` draws from its own
/// stream of the seeded generator, so proposals do not depend on which other
/// iterations ran.
#[derive(Debug, Clone, Copy)]
pub struct RandomPerturb {
    pub seed: u64,
    pub scale: f64,
}

impl RandomPerturb {
    pub const DEFAULT_SCALE: f64 = 2.0;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            scale: Self::DEFAULT_SCALE,
        }
    }

    fn changes(&self, input: &ProposerInput) -> Result<Vec<Change>, AgentError> {
        let spec = parse_spec(&input.spec_text).map_err(|e| AgentError::Invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(input.iteration as u64);
        let ln_s = self.scale.max(1.0).ln();
        let mut factor = || {
            if ln_s == 0.0 {
                1.0
            } else {
                rng.random_range(-ln_s..=ln_s).exp()
            }
        };
        // four significant digits keep the documents readable
        let round = |x: f64| -> f64 { format!("{x:.3e}").parse().expect("formatted float parses") };

        let mut params: Vec<(&str, f64)> = Vec::new();
        match spec.reward_model {
            RewardModelKind::Tabular { alpha } => {
                params.push(("reward_model.alpha", round(alpha * factor())));
            }
            RewardModelKind::Kernel {
                bandwidth,
                learning_rate,
            } => {
                params.push((
                    "reward_model.bandwidth",
                    round(bandwidth * factor()).max(BANDWIDTH_MIN),
                ));
                params.push((
                    "reward_model.learning_rate",
                    round(learning_rate * factor()).min(LEARNING_RATE_MAX),
                ));
            }
            RewardModelKind::Fixed => {}
        }
        if spec.weight_cap.is_finite() {
            params.push(("estimators.weight_cap", round(spec.weight_cap * factor())));
        }
        Ok(params
            .into_iter()
            .map(|(key, value)| Change {
                key: key.to_string(),
                old: current_value(&input.spec_text, key),
                new: value.to_string(),
            })
            .collect())
    }
}

impl Proposer for RandomPerturb {
    fn name(&self) -> String {
        format!("random_perturb(seed={}, scale={})", self.seed, self.scale)
    }

    fn analyze(&self, input: &ProposerInput) -> Result<String, AgentError> {
        Ok(render_instructions(&self.name(), input.iteration, &self.changes(input)?))
    }

    fn modify(&self, input: &ProposerInput, _instructions: &str) -> Result<String, AgentError> {
        Ok(render_proposal(input, &self.changes(input)?))
    }
}

/// Applies a fixed schedule of key overrides; iteration `i` uses entry
/// `(i - 1) % len`.
///
/// Schedule files have one iteration per line, overrides separated by `;`:
///
/// ```text
/// # comment
/// reward_model.alpha = 2; estimators.weight_cap = 20
/// reward_model.alpha = 0.5
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GridProposer {
    schedule: Vec<Vec<(String, String)>>,
}

impl GridProposer {
    pub fn new(schedule: Vec<Vec<(String, String)>>) -> Result<Self, AgentError> {
        if schedule.is_empty() {
            return Err(AgentError::Invalid("grid schedule is empty".into()));
        }
        Ok(Self { schedule })
    }

    pub fn parse(text: &str) -> Result<Self, AgentError> {
        let mut schedule = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let step = line
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|item| {
                    let (k, v) = item.split_once('=').ok_or_else(|| {
                        AgentError::Invalid(format!("grid line {}: expected key = value, got '{}'", i + 1, item.trim()))
                    })?;
                    Ok((k.trim().to_string(), v.trim().to_string()))
                })
                .collect::<Result<Vec<_>, AgentError>>()?;
            schedule.push(step);
        }
        Self::new(schedule)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Invalid(format!("cannot read grid {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn changes(&self, input: &ProposerInput) -> Vec<Change> {
        let step = &self.schedule[(input.iteration.max(1) - 1) % self.schedule.len()];
        step.iter()
            .map(|(key, value)| Change {
                key: key.clone(),
                old: current_value(&input.spec_text, key),
                new: value.clone(),
            })
            .collect()
    }
}

impl Proposer for GridProposer {
    fn name(&self) -> String {
        "grid".into()
    }

    fn analyze(&self, input: &ProposerInput) -> Result<String, AgentError> {
        Ok(render_instructions(&self.name(), input.iteration, &self.changes(input)))
    }

    fn modify(&self, input: &ProposerInput, _instructions: &str) -> Result<String, AgentError> {
        Ok(render_proposal(input, &self.changes(input)))
    }
}

/// A proposer named on the command line or in a batch plan:
/// `null`, `random_perturb`, `random_perturb:<scale>`, `grid=<path>`, `llm`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProposerBinding {
    Null,
    RandomPerturb { scale: f64 },
    Grid(PathBuf),
    Llm,
}

impl ProposerBinding {
    /// Instantiates the proposer; `seed` only affects `random_perturb`.
    pub fn build(&self, seed: u64, llm: Option<&LlmConfig>) -> Result<Box<dyn Proposer>, AgentError> {
        Ok(match self {
            ProposerBinding::Null => Box::new(NullProposer),
            ProposerBinding::RandomPerturb { scale } => Box::new(RandomPerturb { seed, scale: *scale }),
            ProposerBinding::Grid(path) => Box::new(GridProposer::load(path)?),
            ProposerBinding::Llm => {
                let config = match llm {
                    Some(c) => c.clone(),
                    None => LlmConfig::from_env()?,
                };
                Box::new(LlmProposer::new(config)?)
            }
        })
    }
}

impl fmt::Display for ProposerBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProposerBinding::Null => f.write_str("null"),
            ProposerBinding::RandomPerturb { scale } if *scale == RandomPerturb::DEFAULT_SCALE => {
                f.write_str("random_perturb")
            }
            ProposerBinding::RandomPerturb { scale } => write!(f, "random_perturb:{scale}"),
            ProposerBinding::Grid(path) => write!(f, "grid={}", path.display()),
            ProposerBinding::Llm => f.write_str("llm"),
        }
    }
}

impl FromStr for ProposerBinding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("grid=") {
            return Ok(ProposerBinding::Grid(PathBuf::from(path)));
        }
        if let Some(scale) = s.strip_prefix("random_perturb:") {
            let scale: f64 = scale.parse().map_err(|_| format!("bad scale in '{s}'"))?;
            if !(scale >= 1.0 && scale.is_finite()) {
                return Err(format!("scale must be a finite number >= 1, got {scale}"));
            }
            return Ok(ProposerBinding::RandomPerturb { scale });
        }
        match s {
            "null" => Ok(ProposerBinding::Null),
            "random_perturb" => Ok(ProposerBinding::RandomPerturb {
                scale: RandomPerturb::DEFAULT_SCALE,
            }),
            "llm" => Ok(ProposerBinding::Llm),
            other => Err(format!(
                "unknown proposer '{other}' (expected null, random_perturb[:scale], grid=<path> or llm)"
            )),
        }
    }
}
