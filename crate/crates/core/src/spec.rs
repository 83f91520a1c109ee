//! The `.spec` experiment document: parsing, serialization, and guardrails.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment
//! section.key = value
//! ```
//!
//! Sections are `env`, `behavior`, `target`, `data`, `reward_model`,
//! `estimators` and `objective`. Lists are comma-separated and matrices use
//! `;` between rows, e.g. `env.q = 0.1, 0.9; 0.4, 0.6`. Numbers accept
//! scientific notation and `inf`. Unknown keys, duplicate keys and keys that
//! do not apply to the selected `kind` are errors.
//!
//! [`ExperimentSpec::to_text`] always emits keys in the order of [`KEYS`],
//! skipping keys that do not apply, so equal specs serialize identically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::bandit::{build_environment, make_policy, EnvParams, PolicyKind, RewardNoise, RewardTable};
use crate::estimators::{Direction, EstimatorKind, Objective, ObjectiveMetric, RewardModelKind};

/// Every recognized key, in serialization order.
pub const KEYS: &[&str] = &[
    "env.contexts",
    "env.actions",
    "env.r_max",
    "env.context_probs",
    "env.q",
    "env.q_seed",
    "env.noise",
    "behavior.kind",
    "behavior.epsilon",
    "behavior.probs",
    "target.kind",
    "target.epsilon",
    "target.probs",
    "data.n",
    "data.seed",
    "reward_model.kind",
    "reward_model.alpha",
    "reward_model.bandwidth",
    "reward_model.learning_rate",
    "estimators.use",
    "estimators.weight_cap",
    "objective.metric",
    "objective.direction",
];

/// Kernel bandwidths below this value are flagged.
pub const BANDWIDTH_MIN: f64 = 1.0;
/// Kernel learning rates above this value are flagged.
pub const LEARNING_RATE_MAX: f64 = 3e-4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpecErrorKind {
    Syntax(String),
    UnknownKey(String),
    DuplicateKey { key: String, first_line: usize },
    TypeMismatch { key: String, expected: &'static str, found: String },
    OutOfRange { field: String, detail: String },
    NotApplicable { key: String, reason: String },
    Invalid(String),
}

/// A spec parsing or validation failure, with the offending line when known.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct SpecError {
    pub line: Option<usize>,
    pub kind: SpecErrorKind,
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SpecErrorKind::Syntax(text) => write!(f, "syntax error: '{text}'")?,
            SpecErrorKind::UnknownKey(key) => write!(f, "unknown key {key}")?,
            SpecErrorKind::DuplicateKey { key, first_line } => {
                write!(f, "duplicate key {key} (first set at line {first_line})")?
            }
            SpecErrorKind::TypeMismatch { key, expected, found } => {
                write!(f, "type mismatch for {key}: expected {expected}, found '{found}'")?
            }
            SpecErrorKind::OutOfRange { field, detail } => write!(f, "{field} out of range ({detail})")?,
            SpecErrorKind::NotApplicable { key, reason } => write!(f, "key {key} not applicable: {reason}")?,
            SpecErrorKind::Invalid(msg) => write!(f, "invalid spec: {msg}")?,
        }
        if let Some(line) = self.line {
            write!(f, " at line {line}")?;
        }
        Ok(())
    }
}

impl SpecError {
    fn at(line: usize, kind: SpecErrorKind) -> Self {
        Self { line: Some(line), kind }
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Self {
            line: None,
            kind: SpecErrorKind::Invalid(msg.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataParams {
    pub n: usize,
    pub seed: u64,
}

/// The editable experiment artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub env: EnvParams,
    pub behavior: PolicyKind,
    pub target: PolicyKind,
    pub data: DataParams,
    /// Either `Tabular` or `Kernel`.
    pub reward_model: RewardModelKind,
    pub estimators: BTreeSet<EstimatorKind>,
    /// `f64::INFINITY` disables capping.
    pub weight_cap: f64,
    pub objective: Objective,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            env: EnvParams {
                contexts: 4,
                actions: 4,
                r_max: 1.0,
                context_probs: None,
                rewards: RewardTable::Generated { seed: 42 },
                noise: RewardNoise::Bernoulli,
            },
            behavior: PolicyKind::UniformRandom,
            target: PolicyKind::EpsilonGreedy(0.2),
            data: DataParams { n: 2000, seed: 1 },
            reward_model: RewardModelKind::Tabular { alpha: 1.0 },
            estimators: EstimatorKind::ALL.into_iter().collect(),
            weight_cap: f64::INFINITY,
            objective: Objective::default(),
        }
    }
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

fn fmt_matrix(rows: &[Vec<f64>]) -> String {
    rows.iter().map(|r| fmt_list(r)).collect::<Vec<_>>().join("; ")
}

fn policy_entries(section: &str, kind: &PolicyKind, out: &mut Vec<(String, String)>) {
    match kind {
        PolicyKind::UniformRandom => out.push((format!("{section}.kind"), "uniform_random".into())),
        PolicyKind::EpsilonGreedy(eps) => {
            out.push((format!("{section}.kind"), "epsilon_greedy".into()));
            out.push((format!("{section}.epsilon"), eps.to_string()));
        }
        PolicyKind::Explicit(m) => {
            out.push((format!("{section}.kind"), "explicit".into()));
            out.push((format!("{section}.probs"), fmt_matrix(m)));
        }
    }
}

impl ExperimentSpec {
    /// `(key, value)` pairs in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        push("env.contexts", self.env.contexts.to_string());
        push("env.actions", self.env.actions.to_string());
        push("env.r_max", self.env.r_max.to_string());
        if let Some(p) = &self.env.context_probs {
            push("env.context_probs", fmt_list(p));
        }
        match &self.env.rewards {
            RewardTable::Explicit(q) => push("env.q", fmt_matrix(q)),
            RewardTable::Generated { seed } => push("env.q_seed", seed.to_string()),
        }
        push("env.noise", self.env.noise.to_string());
        policy_entries("behavior", &self.behavior, &mut out);
        policy_entries("target", &self.target, &mut out);
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        push("data.n", self.data.n.to_string());
        push("data.seed", self.data.seed.to_string());
        match self.reward_model {
            RewardModelKind::Tabular { alpha } => {
                push("reward_model.kind", "tabular".into());
                push("reward_model.alpha", alpha.to_string());
            }
            RewardModelKind::Kernel {
                bandwidth,
                learning_rate,
            } => {
                push("reward_model.kind", "kernel".into());
                push("reward_model.bandwidth", bandwidth.to_string());
                push("reward_model.learning_rate", learning_rate.to_string());
            }
            RewardModelKind::Fixed => push("reward_model.kind", "fixed".into()),
        }
        push(
            "estimators.use",
            self.estimators.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", "),
        );
        push("estimators.weight_cap", self.weight_cap.to_string());
        push("objective.metric", self.objective.metric.to_string());
        push("objective.direction", self.objective.direction.to_string());
        out
    }

    /// Serializes to the canonical `section.key = value` document.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Canonical text of the sections that determine the dataset, ground truth
    /// and fitted model. Used as the artifact-cache key.
    pub fn artifact_key(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, _)| {
                ["env.", "behavior.", "target.", "data.", "reward_model."]
                    .iter()
                    .any(|p| k.starts_with(p))
            })
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Returns a copy with some keys replaced. Setting `<section>.kind` drops
    /// that section's other keys unless they are overridden too.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, SpecError> {
        let mut entries: BTreeMap<String, (usize, String)> = self
            .entries()
            .into_iter()
            .map(|(k, v)| (k, (0, v)))
            .collect();
        for (key, _) in overrides {
            if let Some(section) = key.strip_suffix(".kind") {
                entries.retain(|k, _| !k.starts_with(&format!("{section}.")));
            }
        }
        for (key, value) in overrides {
            if !KEYS.contains(&key.as_str()) {
                return Err(SpecError {
                    line: None,
                    kind: SpecErrorKind::UnknownKey(key.clone()),
                });
            }
            entries.insert(key.clone(), (0, value.clone()));
        }
        build_spec(&entries)
    }

    /// Cross-field checks: builds the environment and both policies.
    pub fn validate(&self) -> Result<(), SpecError> {
        let env = build_environment(&self.env).map_err(|e| SpecError::invalid(format!("env: {e}")))?;
        make_policy(&env, &self.behavior).map_err(|e| SpecError::invalid(format!("behavior: {e}")))?;
        make_policy(&env, &self.target).map_err(|e| SpecError::invalid(format!("target: {e}")))?;
        if self.data.n < 1 {
            return Err(SpecError::invalid("n out of range"));
        }
        match self.reward_model {
            RewardModelKind::Tabular { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return Err(SpecError::invalid("alpha out of range"))
            }
            RewardModelKind::Kernel { bandwidth, learning_rate }
                if !(bandwidth > 0.0 && bandwidth.is_finite() && learning_rate > 0.0 && learning_rate.is_finite()) =>
            {
                return Err(SpecError::invalid("kernel hyperparameters out of range"))
            }
            RewardModelKind::Fixed => return Err(SpecError::invalid("reward_model.kind must be tabular or kernel")),
            _ => {}
        }
        if !(self.weight_cap > 0.0) {
            return Err(SpecError::invalid("weight_cap out of range"));
        }
        if self.estimators.is_empty() {
            return Err(SpecError::invalid("no estimators selected"));
        }
        let needed = self.objective.metric.estimator();
        if !self.estimators.contains(&needed) {
            return Err(SpecError::invalid(format!(
                "objective uses {needed}, which is not in estimators.use"
            )));
        }
        Ok(())
    }
}

/// Rewrites `key = value` lines of a spec document in place, appending keys
/// that are not present. Comments, ordering and untouched lines are kept, so
/// a diff between the two texts only shows the changed keys.
pub fn rewrite_text(original: &str, changes: &[(String, String)]) -> String {
    let mut out = String::with_capacity(original.len());
    let mut done = vec![false; changes.len()];
    for line in original.split_inclusive('\n') {
        let key = line
            .split_once('=')
            .map(|(k, _)| k.trim())
            .filter(|_| !line.trim_start().starts_with('#'));
        match key.and_then(|k| changes.iter().position(|(c, _)| c == k)) {
            Some(i) => {
                let (k, v) = &changes[i];
                out.push_str(&format!("{k} = {v}"));
                if line.ends_with('\n') {
                    out.push('\n');
                }
                done[i] = true;
            }
            None => out.push_str(line),
        }
    }
    for ((k, v), done) in changes.iter().zip(done) {
        if !done {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
    }
    out
}

/// Parses and validates a spec document.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec, SpecError> {
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = || SpecError::at(line_no, SpecErrorKind::Syntax(raw.to_string()));
        let (key, value) = line.split_once('=').ok_or_else(syntax)?;
        let key = key.trim();
        let (section, name) = key.split_once('.').ok_or_else(syntax)?;
        let ident = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
        if !ident(section) || !ident(name) {
            return Err(syntax());
        }
        if !KEYS.contains(&key) {
            return Err(SpecError::at(line_no, SpecErrorKind::UnknownKey(key.to_string())));
        }
        if let Some((first_line, _)) = entries.get(key) {
            return Err(SpecError::at(
                line_no,
                SpecErrorKind::DuplicateKey {
                    key: key.to_string(),
                    first_line: *first_line,
                },
            ));
        }
        entries.insert(key.to_string(), (line_no, value.trim().to_string()));
    }
    build_spec(&entries)
}

struct Fields<'a> {
    entries: &'a BTreeMap<String, (usize, String)>,
}

impl<'a> Fields<'a> {
    fn get(&self, key: &str) -> Option<(usize, &'a str)> {
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|(l, _)| *l).filter(|l| *l > 0)
    }

    fn error(&self, key: &str, kind: SpecErrorKind) -> SpecError {
        SpecError {
            line: self.line(key),
            kind,
        }
    }

    fn mismatch(&self, key: &str, expected: &'static str, found: &str) -> SpecError {
        self.error(
            key,
            SpecErrorKind::TypeMismatch {
                key: key.to_string(),
                expected,
                found: found.to_string(),
            },
        )
    }

    fn range(&self, key: &str, detail: impl Into<String>) -> SpecError {
        let field = key.rsplit('.').next().unwrap_or(key).to_string();
        self.error(key, SpecErrorKind::OutOfRange { field, detail: detail.into() })
    }

    fn require_absent(&self, key: &str, reason: &str) -> Result<(), SpecError> {
        if self.entries.contains_key(key) {
            return Err(self.error(
                key,
                SpecErrorKind::NotApplicable {
                    key: key.to_string(),
                    reason: reason.to_string(),
                },
            ));
        }
        Ok(())
    }

    fn require(&self, key: &str) -> Result<(usize, &'a str), SpecError> {
        self.get(key)
            .ok_or_else(|| SpecError::invalid(format!("missing required key {key}")))
    }

    fn float(&self, key: &str, raw: &str) -> Result<f64, SpecError> {
        let v: f64 = raw.parse().map_err(|_| self.mismatch(key, "number", raw))?;
        if v.is_nan() {
            return Err(self.mismatch(key, "number", raw));
        }
        Ok(v)
    }

    fn float_or(&self, key: &str, default: f64) -> Result<f64, SpecError> {
        match self.get(key) {
            Some((_, raw)) => self.float(key, raw),
            None => Ok(default),
        }
    }

    /// Integer field with a lower bound; negative input reports a range error.
    fn integer_or(&self, key: &str, default: u64, min: u64) -> Result<u64, SpecError> {
        let Some((_, raw)) = self.get(key) else {
            return Ok(default);
        };
        let v: i128 = raw.parse().map_err(|_| self.mismatch(key, "integer", raw))?;
        if v < min as i128 || v > u64::MAX as i128 {
            return Err(self.range(key, format!("{v} < {min}")));
        }
        Ok(v as u64)
    }

    fn list(&self, key: &str, raw: &str) -> Result<Vec<f64>, SpecError> {
        raw.split(',').map(|s| self.float(key, s.trim())).collect()
    }

    fn matrix(&self, key: &str, raw: &str) -> Result<Vec<Vec<f64>>, SpecError> {
        raw.split(';').map(|row| self.list(key, row)).collect()
    }

    fn policy(&self, section: &str, default: PolicyKind) -> Result<PolicyKind, SpecError> {
        let kind_key = format!("{section}.kind");
        let eps_key = format!("{section}.epsilon");
        let probs_key = format!("{section}.probs");
        let kind = match self.get(&kind_key) {
            None => {
                if self.entries.contains_key(&eps_key) || self.entries.contains_key(&probs_key) {
                    return Err(SpecError::invalid(format!("missing required key {kind_key}")));
                }
                return Ok(default);
            }
            Some((_, raw)) => raw,
        };
        match kind {
            "uniform_random" => {
                self.require_absent(&eps_key, "kind is uniform_random")?;
                self.require_absent(&probs_key, "kind is uniform_random")?;
                Ok(PolicyKind::UniformRandom)
            }
            "epsilon_greedy" => {
                self.require_absent(&probs_key, "kind is epsilon_greedy")?;
                let (_, raw) = self.require(&eps_key)?;
                let eps = self.float(&eps_key, raw)?;
                if !(0.0..=1.0).contains(&eps) {
                    return Err(self.range(&eps_key, format!("{eps} not in [0, 1]")));
                }
                Ok(PolicyKind::EpsilonGreedy(eps))
            }
            "explicit" => {
                self.require_absent(&eps_key, "kind is explicit")?;
                let (_, raw) = self.require(&probs_key)?;
                Ok(PolicyKind::Explicit(self.matrix(&probs_key, raw)?))
            }
            other => Err(self.mismatch(&kind_key, "uniform_random|epsilon_greedy|explicit", other)),
        }
    }
}

fn parse_noise(raw: &str) -> Option<RewardNoise> {
    if raw == "bernoulli" {
        return Some(RewardNoise::Bernoulli);
    }
    let inner = raw.strip_prefix("truncated_gaussian(")?.strip_suffix(')')?;
    let sigma: f64 = inner.trim().parse().ok()?;
    Some(RewardNoise::TruncatedGaussian { sigma })
}

fn build_spec(entries: &BTreeMap<String, (usize, String)>) -> Result<ExperimentSpec, SpecError> {
    let f = Fields { entries };
    let defaults = ExperimentSpec::default();

    let contexts = f.integer_or("env.contexts", defaults.env.contexts as u64, 1)? as usize;
    let actions = f.integer_or("env.actions", defaults.env.actions as u64, 2)? as usize;
    let r_max = f.float_or("env.r_max", defaults.env.r_max)?;
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(f.range("env.r_max", format!("{r_max} must be positive")));
    }
    let context_probs = match f.get("env.context_probs") {
        Some((_, raw)) => Some(f.list("env.context_probs", raw)?),
        None => None,
    };
    let rewards = match (f.get("env.q"), f.get("env.q_seed")) {
        (Some(_), Some(_)) => {
            return Err(f.error(
                "env.q_seed",
                SpecErrorKind::NotApplicable {
                    key: "env.q_seed".into(),
                    reason: "env.q is already given".into(),
                },
            ))
        }
        (Some((_, raw)), None) => RewardTable::Explicit(f.matrix("env.q", raw)?),
        (None, Some(_)) => RewardTable::Generated {
            seed: f.integer_or("env.q_seed", 0, 0)?,
        },
        (None, None) => defaults.env.rewards.clone(),
    };
    let noise = match f.get("env.noise") {
        Some((_, raw)) => {
            let noise = parse_noise(raw).ok_or_else(|| f.mismatch("env.noise", "bernoulli|truncated_gaussian(sigma)", raw))?;
            if let RewardNoise::TruncatedGaussian { sigma } = noise {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(f.range("env.noise", format!("sigma {sigma} must be non-negative")));
                }
            }
            noise
        }
        None => defaults.env.noise,
    };

    let behavior = f.policy("behavior", defaults.behavior.clone())?;
    let target = f.policy("target", defaults.target.clone())?;

    let n = f.integer_or("data.n", defaults.data.n as u64, 1)? as usize;
    let seed = f.integer_or("data.seed", defaults.data.seed, 0)?;

    let reward_model = match f.get("reward_model.kind").map(|(_, v)| v) {
        None | Some("tabular") => {
            f.require_absent("reward_model.bandwidth", "kind is tabular")?;
            f.require_absent("reward_model.learning_rate", "kind is tabular")?;
            let alpha = f.float_or("reward_model.alpha", 1.0)?;
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(f.range("reward_model.alpha", format!("{alpha} must be positive")));
            }
            RewardModelKind::Tabular { alpha }
        }
        Some("kernel") => {
            f.require_absent("reward_model.alpha", "kind is kernel")?;
            let bandwidth = f.float_or("reward_model.bandwidth", 1.0)?;
            let learning_rate = f.float_or("reward_model.learning_rate", 1e-4)?;
            if !(bandwidth > 0.0 && bandwidth.is_finite()) {
                return Err(f.range("reward_model.bandwidth", format!("{bandwidth} must be positive")));
            }
            if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                return Err(f.range("reward_model.learning_rate", format!("{learning_rate} must be positive")));
            }
            RewardModelKind::Kernel { bandwidth, learning_rate }
        }
        Some(other) => return Err(f.mismatch("reward_model.kind", "tabular|kernel", other)),
    };

    let estimators = match f.get("estimators.use") {
        Some((_, raw)) => raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<EstimatorKind>()
                    .map_err(|_| f.mismatch("estimators.use", "dm|ipw|snipw|dr", s.trim()))
            })
            .collect::<Result<BTreeSet<_>, _>>()?,
        None => defaults.estimators.clone(),
    };
    let weight_cap = f.float_or("estimators.weight_cap", f64::INFINITY)?;
    if !(weight_cap > 0.0) {
        return Err(f.range("estimators.weight_cap", format!("{weight_cap} must be positive")));
    }

    let metric = match f.get("objective.metric") {
        Some((_, raw)) => raw
            .parse::<ObjectiveMetric>()
            .map_err(|_| f.mismatch("objective.metric", "relative_ee|estimate|relative_policy_value(estimator)", raw))?,
        None => defaults.objective.metric,
    };
    let direction = match f.get("objective.direction") {
        Some((_, raw)) => raw
            .parse::<Direction>()
            .map_err(|_| f.mismatch("objective.direction", "minimize|maximize", raw))?,
        None => defaults.objective.direction,
    };

    let spec = ExperimentSpec {
        env: EnvParams {
            contexts,
            actions,
            r_max,
            context_probs,
            rewards,
            noise,
        },
        behavior,
        target,
        data: DataParams { n, seed },
        reward_model,
        estimators,
        weight_cap,
        objective: Objective { metric, direction },
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GuardrailRule {
    BandwidthMin,
    LearningRateMax,
}

impl fmt::Display for GuardrailRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuardrailRule::BandwidthMin => "bandwidth_min",
            GuardrailRule::LearningRateMax => "learning_rate_max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Severity {
    Warn,
    Reject,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Warn => "warn",
            Severity::Reject => "reject",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardrailFinding {
    pub key: &'static str,
    pub value: f64,
    pub rule: GuardrailRule,
    pub severity: Severity,
}

impl fmt::Display for GuardrailFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}={}", self.severity, self.rule, self.key, self.value)
    }
}

/// Flags kernel hyperparameters outside the stable region: bandwidth below
/// [`BANDWIDTH_MIN`] or learning rate above [`LEARNING_RATE_MAX`] (both bounds
/// themselves are allowed). Findings are `Reject` in strict mode.
pub fn check_guardrails(spec: &ExperimentSpec, strict: bool) -> Vec<GuardrailFinding> {
    let severity = if strict { Severity::Reject } else { Severity::Warn };
    let mut findings = Vec::new();
    if let RewardModelKind::Kernel {
        bandwidth,
        learning_rate,
    } = spec.reward_model
    {
        if bandwidth < BANDWIDTH_MIN {
            findings.push(GuardrailFinding {
                key: "reward_model.bandwidth",
                value: bandwidth,
                rule: GuardrailRule::BandwidthMin,
                severity,
            });
        }
        if learning_rate > LEARNING_RATE_MAX {
            findings.push(GuardrailFinding {
                key: "reward_model.learning_rate",
                value: learning_rate,
                rule: GuardrailRule::LearningRateMax,
                severity,
            });
        }
    }
    findings
}
