//! Off-policy value estimators (DM, IPW, SNIPW, DR), reward-model fitting,
//! and the error metrics used as optimization objectives.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::bandit::{sample_log, true_policy_value, BanditError, Environment, LoggedDataset, Policy};

/// Gradient steps taken by the kernel reward model.
pub const KERNEL_ITERATIONS: usize = 500;

/// Header of the estimator report CSV.
pub const REPORT_CSV_HEADER: &str = "estimator,estimate,relative_ee,ground_truth";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("zero propensity at record {index}")]
    ZeroPropensity { index: usize },
    #[error("degenerate self-normalization: all importance weights are zero")]
    DegenerateSelfNormalization,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("undefined relative error: ground truth is zero")]
    UndefinedRelativeError,
    #[error("replications too small: need at least 2, got {0}")]
    ReplicationsTooSmall(usize),
    #[error("replication {index} failed: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<EstimatorError>,
    },
    #[error("non-finite estimate from {0}")]
    NonFinite(EstimatorKind),
    #[error("estimator {0} not selected")]
    NotSelected(EstimatorKind),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error("report csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EstimatorKind {
    Dm,
    Ipw,
    Snipw,
    Dr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::Dm, Self::Ipw, Self::Snipw, Self::Dr];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dm => "dm",
            Self::Ipw => "ipw",
            Self::Snipw => "snipw",
            Self::Dr => "dr",
        }
    }

    pub fn needs_reward_model(self) -> bool {
        matches!(self, Self::Dm | Self::Dr)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dm" => Ok(Self::Dm),
            "ipw" => Ok(Self::Ipw),
            "snipw" => Ok(Self::Snipw),
            "dr" => Ok(Self::Dr),
            other => Err(format!("unknown estimator '{other}'")),
        }
    }
}

/// How `q_hat` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardModelKind {
    /// Per-cell mean shrunk toward `r_max / 2` with pseudo-count `alpha`.
    Tabular { alpha: f64 },
    /// Projected gradient descent on a context-kernel-weighted squared loss.
    Kernel { bandwidth: f64, learning_rate: f64 },
    /// Table supplied directly (true model, constants, deliberately wrong models).
    Fixed,
}

/// A fitted `X x A` table of predicted rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    kind: RewardModelKind,
    table: Vec<Vec<f64>>,
}

impl RewardModel {
    pub fn from_table(table: Vec<Vec<f64>>) -> Self {
        Self {
            kind: RewardModelKind::Fixed,
            table,
        }
    }

    pub fn constant(contexts: usize, actions: usize, value: f64) -> Self {
        Self::from_table(vec![vec![value; actions]; contexts])
    }

    pub fn kind(&self) -> RewardModelKind {
        self.kind
    }

    pub(crate) fn set_kind(&mut self, kind: RewardModelKind) {
        self.kind = kind;
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn predict(&self, context: usize, action: usize) -> f64 {
        self.table[context][action]
    }
}

/// Dimensions of the space a model is fitted over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDims {
    pub contexts: usize,
    pub actions: usize,
    pub r_max: f64,
}

impl From<&Environment> for ModelDims {
    fn from(env: &Environment) -> Self {
        Self {
            contexts: env.contexts(),
            actions: env.actions(),
            r_max: env.r_max(),
        }
    }
}

fn check_records(data: &LoggedDataset, contexts: usize, actions: usize) -> Result<(), EstimatorError> {
    if data.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    if let Some((i, r)) = data
        .records
        .iter()
        .enumerate()
        .find(|(_, r)| r.context >= contexts || r.action >= actions)
    {
        return Err(EstimatorError::DimensionMismatch(format!(
            "record {i} has (context {}, action {}) outside {contexts}x{actions}",
            r.context, r.action
        )));
    }
    Ok(())
}

pub fn fit_reward_model(
    data: &LoggedDataset,
    dims: ModelDims,
    kind: RewardModelKind,
) -> Result<RewardModel, EstimatorError> {
    check_records(data, dims.contexts, dims.actions)?;
    let prior = dims.r_max / 2.0;
    let table = match kind {
        RewardModelKind::Tabular { alpha } => {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(EstimatorError::InvalidHyperparameter(format!(
                    "alpha must be positive, got {alpha}"
                )));
            }
            let mut sums = vec![vec![0.0; dims.actions]; dims.contexts];
            let mut counts = vec![vec![0.0; dims.actions]; dims.contexts];
            for r in &data.records {
                sums[r.context][r.action] += r.reward;
                counts[r.context][r.action] += 1.0;
            }
            sums.iter()
                .zip(&counts)
                .map(|(s_row, c_row)| {
                    s_row
                        .iter()
                        .zip(c_row)
                        .map(|(s, c)| ((s + alpha * prior) / (c + alpha)).clamp(0.0, dims.r_max))
                        .collect()
                })
                .collect()
        }
        RewardModelKind::Kernel {
            bandwidth,
            learning_rate,
        } => {
            if !(bandwidth > 0.0) || !bandwidth.is_finite() {
                return Err(EstimatorError::InvalidHyperparameter(format!(
                    "bandwidth must be positive, got {bandwidth}"
                )));
            }
            if !(learning_rate > 0.0) || !learning_rate.is_finite() {
                return Err(EstimatorError::InvalidHyperparameter(format!(
                    "learning rate must be positive, got {learning_rate}"
                )));
            }
            // Loss per cell: 0.5 * sum_i w(x, x_i) [a_i = a] (theta - r_i)^2 with a
            // Gaussian kernel over context indices. Its gradient is W*theta - S.
            let mut weight = vec![vec![0.0; dims.actions]; dims.contexts];
            let mut weighted_reward = vec![vec![0.0; dims.actions]; dims.contexts];
            for x in 0..dims.contexts {
                for r in &data.records {
                    let d = x as f64 - r.context as f64;
                    let w = (-d * d / (2.0 * bandwidth * bandwidth)).exp();
                    weight[x][r.action] += w;
                    weighted_reward[x][r.action] += w * r.reward;
                }
            }
            (0..dims.contexts)
                .map(|x| {
                    (0..dims.actions)
                        .map(|a| {
                            let (w, s) = (weight[x][a], weighted_reward[x][a]);
                            let mut theta = prior;
                            for _ in 0..KERNEL_ITERATIONS {
                                theta = (theta - learning_rate * (w * theta - s)).clamp(0.0, dims.r_max);
                            }
                            theta
                        })
                        .collect()
                })
                .collect()
        }
        RewardModelKind::Fixed => {
            return Err(EstimatorError::InvalidHyperparameter(
                "fixed reward models are built with RewardModel::from_table".into(),
            ))
        }
    };
    Ok(RewardModel { kind, table })
}

fn check_model(model: &RewardModel, target: &Policy) -> Result<(), EstimatorError> {
    let ok = model.table.len() == target.contexts()
        && model.table.iter().all(|row| row.len() == target.actions());
    if !ok {
        return Err(EstimatorError::DimensionMismatch(
            "reward model and target policy dimensions differ".into(),
        ));
    }
    Ok(())
}

/// Importance ratios `pi_e(a_i|x_i) / pi_b(a_i|x_i)`, capped at `weight_cap`.
/// Pass `f64::INFINITY` for no cap.
pub fn importance_weights(
    data: &LoggedDataset,
    target: &Policy,
    weight_cap: f64,
) -> Result<Vec<f64>, EstimatorError> {
    check_records(data, target.contexts(), target.actions())?;
    data.records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            if !(r.propensity > 0.0) {
                return Err(EstimatorError::ZeroPropensity { index });
            }
            Ok((target.prob(r.context, r.action) / r.propensity).min(weight_cap))
        })
        .collect()
}

fn model_term(model: &RewardModel, target: &Policy, context: usize) -> f64 {
    target.probs()[context]
        .iter()
        .zip(&model.table[context])
        .map(|(pi, q)| pi * q)
        .sum()
}

/// Direct method: `(1/n) sum_i sum_a pi_e(a|x_i) q_hat(x_i, a)`.
pub fn estimate_dm(
    data: &LoggedDataset,
    target: &Policy,
    model: &RewardModel,
) -> Result<f64, EstimatorError> {
    check_records(data, target.contexts(), target.actions())?;
    check_model(model, target)?;
    let total: f64 = data
        .records
        .iter()
        .map(|r| model_term(model, target, r.context))
        .sum();
    Ok(total / data.len() as f64)
}

/// Inverse probability weighting: `(1/n) sum_i rho_i r_i`.
pub fn estimate_ipw(data: &LoggedDataset, target: &Policy, weight_cap: f64) -> Result<f64, EstimatorError> {
    let weights = importance_weights(data, target, weight_cap)?;
    let total: f64 = weights
        .iter()
        .zip(&data.records)
        .map(|(w, r)| w * r.reward)
        .sum();
    Ok(total / data.len() as f64)
}

/// Self-normalized IPW: `sum_i rho_i r_i / sum_i rho_i`.
pub fn estimate_snipw(data: &LoggedDataset, target: &Policy, weight_cap: f64) -> Result<f64, EstimatorError> {
    let weights = importance_weights(data, target, weight_cap)?;
    let norm: f64 = weights.iter().sum();
    if !(norm > 0.0) {
        return Err(EstimatorError::DegenerateSelfNormalization);
    }
    let total: f64 = weights
        .iter()
        .zip(&data.records)
        .map(|(w, r)| w * r.reward)
        .sum();
    Ok(total / norm)
}

/// Doubly robust: the DM term plus an importance-weighted residual.
pub fn estimate_dr(
    data: &LoggedDataset,
    target: &Policy,
    model: &RewardModel,
    weight_cap: f64,
) -> Result<f64, EstimatorError> {
    let weights = importance_weights(data, target, weight_cap)?;
    check_model(model, target)?;
    let total: f64 = weights
        .iter()
        .zip(&data.records)
        .map(|(w, r)| {
            model_term(model, target, r.context) + w * (r.reward - model.predict(r.context, r.action))
        })
        .sum();
    Ok(total / data.len() as f64)
}

/// Dispatches to a single estimator. `model` is required for DM and DR.
pub fn estimate(
    kind: EstimatorKind,
    data: &LoggedDataset,
    target: &Policy,
    model: Option<&RewardModel>,
    weight_cap: f64,
) -> Result<f64, EstimatorError> {
    let need_model = || {
        model.ok_or_else(|| EstimatorError::InvalidHyperparameter(format!("{kind} requires a reward model")))
    };
    let value = match kind {
        EstimatorKind::Dm => estimate_dm(data, target, need_model()?)?,
        EstimatorKind::Ipw => estimate_ipw(data, target, weight_cap)?,
        EstimatorKind::Snipw => estimate_snipw(data, target, weight_cap)?,
        EstimatorKind::Dr => estimate_dr(data, target, need_model()?, weight_cap)?,
    };
    if !value.is_finite() {
        return Err(EstimatorError::NonFinite(kind));
    }
    Ok(value)
}

/// `|estimate - truth| / |truth|`.
pub fn relative_estimation_error(estimate: f64, ground_truth: f64) -> Result<f64, EstimatorError> {
    if ground_truth == 0.0 {
        return Err(EstimatorError::UndefinedRelativeError);
    }
    Ok((estimate - ground_truth).abs() / ground_truth.abs())
}

/// Monte-Carlo MSE with its standard error, plus the raw per-replication estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct MseEstimate {
    pub mse: f64,
    pub stderr: f64,
    pub estimates: Vec<f64>,
}

impl MseEstimate {
    pub fn mean_estimate(&self) -> f64 {
        self.estimates.iter().sum::<f64>() / self.estimates.len() as f64
    }

    /// Standard error of the mean estimate across replications.
    pub fn estimate_stderr(&self) -> f64 {
        sample_stderr(&self.estimates)
    }
}

fn sample_stderr(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Draws `replications` logs with seeds `seed + r`, applies `estimator` to each,
/// and averages the squared error against the exact value of `target`.
///
/// Replications run on the rayon pool but are reduced in index order, so the
/// result does not depend on scheduling.
pub fn mse_of_estimator<F>(
    estimator: F,
    env: &Environment,
    behavior: &Policy,
    target: &Policy,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<MseEstimate, EstimatorError>
where
    F: Fn(&LoggedDataset) -> Result<f64, EstimatorError> + Sync,
{
    if replications < 2 {
        return Err(EstimatorError::ReplicationsTooSmall(replications));
    }
    let truth = true_policy_value(env, target)?;
    let estimates = (0..replications)
        .into_par_iter()
        .map(|index| {
            let data = sample_log(env, behavior, n, seed.wrapping_add(index as u64))?;
            estimator(&data).map_err(|e| EstimatorError::Replication {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>, EstimatorError>>()?;
    let squared: Vec<f64> = estimates.iter().map(|v| (truth - v).powi(2)).collect();
    let mse = squared.iter().sum::<f64>() / replications as f64;
    Ok(MseEstimate {
        mse,
        stderr: sample_stderr(&squared),
        estimates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    /// True when `candidate` is strictly better than `incumbent`.
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::Minimize => candidate < incumbent,
            Direction::Maximize => candidate > incumbent,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Minimize => "minimize",
            Direction::Maximize => "maximize",
        })
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minimize" => Ok(Direction::Minimize),
            "maximize" => Ok(Direction::Maximize),
            other => Err(format!("unknown direction '{other}'")),
        }
    }
}

/// The scalar extracted from a report for loop selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveMetric {
    RelativeEe(EstimatorKind),
    Estimate(EstimatorKind),
    /// `estimate / ground_truth`; above 1 means the estimate exceeds the truth.
    RelativePolicyValue(EstimatorKind),
}

impl ObjectiveMetric {
    pub fn estimator(self) -> EstimatorKind {
        match self {
            Self::RelativeEe(k) | Self::Estimate(k) | Self::RelativePolicyValue(k) => k,
        }
    }
}

impl fmt::Display for ObjectiveMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RelativeEe(k) => write!(f, "relative_ee({k})"),
            Self::Estimate(k) => write!(f, "estimate({k})"),
            Self::RelativePolicyValue(k) => write!(f, "relative_policy_value({k})"),
        }
    }
}

impl FromStr for ObjectiveMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, rest) = s
            .split_once('(')
            .ok_or_else(|| format!("expected metric(estimator), got '{s}'"))?;
        let inner = rest
            .strip_suffix(')')
            .ok_or_else(|| format!("missing ')' in '{s}'"))?;
        let kind: EstimatorKind = inner.trim().parse()?;
        match name.trim() {
            "relative_ee" => Ok(Self::RelativeEe(kind)),
            "estimate" => Ok(Self::Estimate(kind)),
            "relative_policy_value" => Ok(Self::RelativePolicyValue(kind)),
            other => Err(format!("unknown metric '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Objective {
    pub metric: ObjectiveMetric,
    pub direction: Direction,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            metric: ObjectiveMetric::RelativeEe(EstimatorKind::Dr),
            direction: Direction::Minimize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRow {
    pub kind: EstimatorKind,
    pub estimate: f64,
    pub relative_ee: f64,
}

/// Per-estimator results against the exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    /// Sorted by estimator kind (dm, ipw, snipw, dr).
    pub rows: Vec<EstimateRow>,
    pub ground_truth: f64,
    pub objective: Objective,
    pub objective_value: f64,
}

impl EstimatorReport {
    pub fn new(
        estimates: &[(EstimatorKind, f64)],
        ground_truth: f64,
        objective: Objective,
    ) -> Result<Self, EstimatorError> {
        let mut rows = estimates
            .iter()
            .map(|&(kind, estimate)| {
                Ok(EstimateRow {
                    kind,
                    estimate,
                    relative_ee: relative_estimation_error(estimate, ground_truth)?,
                })
            })
            .collect::<Result<Vec<_>, EstimatorError>>()?;
        rows.sort_by_key(|r| r.kind);
        rows.dedup_by_key(|r| r.kind);
        let mut report = Self {
            rows,
            ground_truth,
            objective,
            objective_value: f64::NAN,
        };
        report.objective_value = report.metric_value(objective.metric)?;
        Ok(report)
    }

    pub fn row(&self, kind: EstimatorKind) -> Option<&EstimateRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    pub fn metric_value(&self, metric: ObjectiveMetric) -> Result<f64, EstimatorError> {
        let row = self
            .row(metric.estimator())
            .ok_or(EstimatorError::NotSelected(metric.estimator()))?;
        Ok(match metric {
            ObjectiveMetric::RelativeEe(_) => row.relative_ee,
            ObjectiveMetric::Estimate(_) => row.estimate,
            ObjectiveMetric::RelativePolicyValue(_) => row.estimate / self.ground_truth,
        })
    }

    /// Writes the estimator rows followed by one summary row of the form
    /// `objective,<value>,<metric>,<direction>`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{REPORT_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.kind, r.estimate, r.relative_ee, self.ground_truth)?;
        }
        writeln!(
            out,
            "objective,{},{},{}",
            self.objective_value, self.objective.metric, self.objective.direction
        )
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, EstimatorError> {
        let bad = |msg: String| EstimatorError::Csv(msg);
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h == REPORT_CSV_HEADER => {}
            _ => return Err(bad("missing header".into())),
        }
        let mut rows = Vec::new();
        let mut ground_truth = None;
        let mut summary = None;
        for line in lines {
            let line = line.map_err(|e| bad(e.to_string()))?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad(format!("malformed row '{line}'")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number '{s}'")));
            if fields[0] == "objective" {
                let metric: ObjectiveMetric = fields[2].parse().map_err(bad)?;
                let direction: Direction = fields[3].parse().map_err(bad)?;
                summary = Some((num(fields[1])?, Objective { metric, direction }));
            } else {
                let kind: EstimatorKind = fields[0].parse().map_err(bad)?;
                ground_truth = Some(num(fields[3])?);
                rows.push(EstimateRow {
                    kind,
                    estimate: num(fields[1])?,
                    relative_ee: num(fields[2])?,
                });
            }
        }
        let (objective_value, objective) = summary.ok_or_else(|| bad("missing objective row".into()))?;
        Ok(Self {
            rows,
            ground_truth: ground_truth.ok_or_else(|| bad("no estimator rows".into()))?,
            objective,
            objective_value,
        })
    }
}
