//! Finite contextual-bandit environments with exactly computable policy values.
//!
//! Contexts and actions are indexed `0..X` and `0..A`. The expected reward
//! table `q(x, a)` is stored explicitly, so the value of any policy is a
//! finite sum and estimator bias can be measured against the true number.
//!
//! Logged data is drawn with [`ChaCha8Rng`] seeded through
//! `SeedableRng::seed_from_u64`. That generator has a fixed, portable output
//! stream, which is what makes `sample_log` reproducible across builds.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Tolerance used when checking that probability vectors sum to one.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Header of the logged-dataset CSV file.
pub const DATASET_CSV_HEADER: &str = "context,action,reward,propensity";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BanditError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("probabilities sum to {sum} ({what})")]
    NotNormalized { what: String, sum: f64 },
    #[error("negative probability {value} ({what})")]
    NegativeProbability { what: String, value: f64 },
    #[error("reward mean out of bounds: q({context},{action}) = {value} not in [0, {r_max}]")]
    RewardOutOfBounds {
        context: usize,
        action: usize,
        value: f64,
        r_max: f64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("dataset csv: {0}")]
    Csv(String),
}

/// Reward distribution around the mean `q(x, a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardNoise {
    /// `r_max` with probability `q / r_max`, otherwise 0.
    Bernoulli,
    /// Gaussian noise with standard deviation `sigma`, truncated symmetrically
    /// to `[q - m, q + m]` with `m = min(q, r_max - q)`. The symmetric cut keeps
    /// the mean at exactly `q` while the support stays inside `[0, r_max]`.
    TruncatedGaussian { sigma: f64 },
}

impl fmt::Display for RewardNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardNoise::Bernoulli => write!(f, "bernoulli"),
            RewardNoise::TruncatedGaussian { sigma } => write!(f, "truncated_gaussian({sigma})"),
        }
    }
}

/// Where the expected-reward table comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardTable {
    Explicit(Vec<Vec<f64>>),
    /// Each cell drawn uniformly from `[0, r_max]` by a seeded generator.
    Generated { seed: u64 },
}

/// Parameters from which an [`Environment`] is built.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvParams {
    pub contexts: usize,
    pub actions: usize,
    pub r_max: f64,
    /// `None` means uniform over contexts.
    pub context_probs: Option<Vec<f64>>,
    pub rewards: RewardTable,
    pub noise: RewardNoise,
}

/// A validated finite contextual bandit.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    context_probs: Vec<f64>,
    reward_means: Vec<Vec<f64>>,
    r_max: f64,
    noise: RewardNoise,
}

fn check_distribution(values: &[f64], what: &str) -> Result<(), BanditError> {
    if let Some(&value) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(BanditError::NegativeProbability {
            what: what.to_string(),
            value,
        });
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(BanditError::NotNormalized {
            what: what.to_string(),
            sum,
        });
    }
    Ok(())
}

/// Builds and validates an environment. Generated reward tables are a pure
/// function of their seed.
pub fn build_environment(params: &EnvParams) -> Result<Environment, BanditError> {
    if params.contexts < 1 {
        return Err(BanditError::DimensionMismatch(
            "at least one context is required".into(),
        ));
    }
    if params.actions < 2 {
        return Err(BanditError::DimensionMismatch(
            "at least two actions are required".into(),
        ));
    }
    if !(params.r_max > 0.0) || !params.r_max.is_finite() {
        return Err(BanditError::InvalidParameter(format!(
            "r_max must be positive and finite, got {}",
            params.r_max
        )));
    }
    if let RewardNoise::TruncatedGaussian { sigma } = params.noise {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(BanditError::InvalidParameter(format!(
                "noise sigma must be non-negative, got {sigma}"
            )));
        }
    }

    let context_probs = match &params.context_probs {
        Some(p) => {
            if p.len() != params.contexts {
                return Err(BanditError::DimensionMismatch(format!(
                    "{} context probabilities for {} contexts",
                    p.len(),
                    params.contexts
                )));
            }
            check_distribution(p, "context distribution")?;
            p.clone()
        }
        None => vec![1.0 / params.contexts as f64; params.contexts],
    };

    let reward_means = match &params.rewards {
        RewardTable::Explicit(q) => {
            if q.len() != params.contexts || q.iter().any(|row| row.len() != params.actions) {
                return Err(BanditError::DimensionMismatch(format!(
                    "reward table must be {}x{}",
                    params.contexts, params.actions
                )));
            }
            q.clone()
        }
        RewardTable::Generated { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..params.contexts)
                .map(|_| {
                    (0..params.actions)
                        .map(|_| rng.random::<f64>() * params.r_max)
                        .collect()
                })
                .collect()
        }
    };
    for (x, row) in reward_means.iter().enumerate() {
        for (a, &value) in row.iter().enumerate() {
            if !(0.0..=params.r_max).contains(&value) {
                return Err(BanditError::RewardOutOfBounds {
                    context: x,
                    action: a,
                    value,
                    r_max: params.r_max,
                });
            }
        }
    }

    Ok(Environment {
        context_probs,
        reward_means,
        r_max: params.r_max,
        noise: params.noise,
    })
}

impl Environment {
    pub fn contexts(&self) -> usize {
        self.context_probs.len()
    }

    pub fn actions(&self) -> usize {
        self.reward_means[0].len()
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn noise(&self) -> RewardNoise {
        self.noise
    }

    pub fn context_probs(&self) -> &[f64] {
        &self.context_probs
    }

    /// The `X x A` table of expected rewards `q(x, a)`.
    pub fn reward_means(&self) -> &[Vec<f64>] {
        &self.reward_means
    }

    /// Greedy action for a context; ties go to the lowest action index.
    pub fn greedy_action(&self, context: usize) -> usize {
        let row = &self.reward_means[context];
        let mut best = 0;
        for (a, &q) in row.iter().enumerate().skip(1) {
            if q > row[best] {
                best = a;
            }
        }
        best
    }

    fn sample_reward<R: Rng>(&self, rng: &mut R, context: usize, action: usize) -> f64 {
        let q = self.reward_means[context][action];
        match self.noise {
            RewardNoise::Bernoulli => {
                if rng.random::<f64>() < q / self.r_max {
                    self.r_max
                } else {
                    0.0
                }
            }
            RewardNoise::TruncatedGaussian { sigma } => {
                let half_width = q.min(self.r_max - q);
                if sigma == 0.0 || half_width == 0.0 {
                    return q;
                }
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    let noise = sigma * z;
                    if noise.abs() <= half_width {
                        return (q + noise).clamp(0.0, self.r_max);
                    }
                }
            }
        }
    }
}

/// How to construct a policy over an environment's action set.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    UniformRandom,
    /// `1 - eps + eps/A` on the greedy action, `eps/A` elsewhere.
    EpsilonGreedy(f64),
    Explicit(Vec<Vec<f64>>),
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::UniformRandom => write!(f, "uniform_random"),
            PolicyKind::EpsilonGreedy(eps) => write!(f, "epsilon_greedy({eps})"),
            PolicyKind::Explicit(_) => write!(f, "explicit"),
        }
    }
}

/// A stochastic map from contexts to action distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Vec<Vec<f64>>,
    label: String,
}

impl Policy {
    /// Validates an explicit probability matrix.
    pub fn new(probs: Vec<Vec<f64>>, label: impl Into<String>) -> Result<Self, BanditError> {
        if probs.is_empty() {
            return Err(BanditError::DimensionMismatch("policy has no rows".into()));
        }
        let width = probs[0].len();
        for (x, row) in probs.iter().enumerate() {
            if row.len() != width {
                return Err(BanditError::DimensionMismatch(format!(
                    "policy row {x} has {} entries, expected {width}",
                    row.len()
                )));
            }
            check_distribution(row, &format!("policy row {x}"))?;
        }
        Ok(Self {
            probs,
            label: label.into(),
        })
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn prob(&self, context: usize, action: usize) -> f64 {
        self.probs[context][action]
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn contexts(&self) -> usize {
        self.probs.len()
    }

    pub fn actions(&self) -> usize {
        self.probs[0].len()
    }

    fn check_dims(&self, env: &Environment) -> Result<(), BanditError> {
        if self.contexts() != env.contexts() || self.actions() != env.actions() {
            return Err(BanditError::DimensionMismatch(format!(
                "policy '{}' is {}x{}, environment is {}x{}",
                self.label,
                self.contexts(),
                self.actions(),
                env.contexts(),
                env.actions()
            )));
        }
        Ok(())
    }
}

pub fn make_policy(env: &Environment, kind: &PolicyKind) -> Result<Policy, BanditError> {
    let (xs, acts) = (env.contexts(), env.actions());
    let label = kind.to_string();
    match kind {
        PolicyKind::UniformRandom => Policy::new(vec![vec![1.0 / acts as f64; acts]; xs], label),
        PolicyKind::EpsilonGreedy(eps) => {
            if !(0.0..=1.0).contains(eps) {
                return Err(BanditError::InvalidParameter(format!(
                    "epsilon must be in [0, 1], got {eps}"
                )));
            }
            let explore = eps / acts as f64;
            let probs = (0..xs)
                .map(|x| {
                    let greedy = env.greedy_action(x);
                    (0..acts)
                        .map(|a| {
                            if a == greedy {
                                1.0 - eps + explore
                            } else {
                                explore
                            }
                        })
                        .collect()
                })
                .collect();
            Policy::new(probs, label)
        }
        PolicyKind::Explicit(matrix) => {
            let policy = Policy::new(matrix.clone(), label)?;
            policy.check_dims(env)?;
            Ok(policy)
        }
    }
}

/// `V(pi) = sum_x p(x) sum_a pi(a|x) q(x,a)`, by exact summation.
pub fn true_policy_value(env: &Environment, policy: &Policy) -> Result<f64, BanditError> {
    policy.check_dims(env)?;
    Ok(env
        .context_probs
        .iter()
        .zip(&env.reward_means)
        .zip(&policy.probs)
        .map(|((p, q_row), pi_row)| {
            p * q_row.iter().zip(pi_row).map(|(q, pi)| q * pi).sum::<f64>()
        })
        .sum())
}

/// One logged interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub context: usize,
    pub action: usize,
    pub reward: f64,
    /// Behavior probability of the logged action in the logged context.
    pub propensity: f64,
}

/// Interactions logged under a behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    pub records: Vec<LogRecord>,
    pub behavior_label: String,
    pub seed: u64,
}

impl LoggedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum::<f64>() / self.records.len() as f64
    }

    /// Writes the `context,action,reward,propensity` CSV. Floats use the
    /// shortest decimal form that parses back to the same value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{DATASET_CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{}",
                r.context, r.action, r.reward, r.propensity
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    /// Reads a dataset CSV. Label and seed are not part of the file.
    pub fn read_csv<R: BufRead>(
        input: R,
        behavior_label: impl Into<String>,
        seed: u64,
    ) -> Result<Self, BanditError> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim_end() == DATASET_CSV_HEADER => {}
            _ => return Err(BanditError::Csv("missing header".into())),
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| BanditError::Csv(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let bad = || BanditError::Csv(format!("malformed row {}", i + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad());
            }
            let record = LogRecord {
                context: fields[0].parse().map_err(|_| bad())?,
                action: fields[1].parse().map_err(|_| bad())?,
                reward: fields[2].parse().map_err(|_| bad())?,
                propensity: fields[3].parse().map_err(|_| bad())?,
            };
            if !(record.propensity > 0.0 && record.propensity <= 1.0) {
                return Err(BanditError::Csv(format!(
                    "propensity {} out of (0, 1] at row {}",
                    record.propensity,
                    i + 2
                )));
            }
            records.push(record);
        }
        Ok(Self {
            records,
            behavior_label: behavior_label.into(),
            seed,
        })
    }
}

/// Inverse-CDF draw. Zero-probability entries are never returned.
fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u = rng.random::<f64>();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cumulative += p;
            last_positive = i;
            if u < cumulative {
                return i;
            }
        }
    }
    // Rounding left the cumulative sum a hair under 1.
    last_positive
}

/// Draws `n` i.i.d. records from `p(x) pi_b(a|x) p(r|x,a)`.
pub fn sample_log(
    env: &Environment,
    behavior: &Policy,
    n: usize,
    seed: u64,
) -> Result<LoggedDataset, BanditError> {
    if n == 0 {
        return Err(BanditError::EmptySample);
    }
    behavior.check_dims(env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|_| {
            let context = sample_index(&mut rng, &env.context_probs);
            let action = sample_index(&mut rng, &behavior.probs[context]);
            let reward = env.sample_reward(&mut rng, context, action);
            LogRecord {
                context,
                action,
                reward,
                propensity: behavior.probs[context][action],
            }
        })
        .collect();
    Ok(LoggedDataset {
        records,
        behavior_label: behavior.label.clone(),
        seed,
    })
}
