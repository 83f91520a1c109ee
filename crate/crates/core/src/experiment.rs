//! Turns an [`ExperimentSpec`] into an [`EstimatorReport`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{
    build_environment, make_policy, sample_log, true_policy_value, BanditError, Environment, LogRecord,
    LoggedDataset, Policy,
};
use crate::cache::ArtifactCache;
use crate::estimators::{estimate, fit_reward_model, EstimatorError, EstimatorReport, ModelDims, RewardModel};
use crate::spec::ExperimentSpec;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("cached artifact could not be decoded: {0}")]
    CacheDecode(String),
}

/// Everything expensive that a spec evaluation depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub dataset: LoggedDataset,
    pub ground_truth: f64,
    pub model: RewardModel,
}

#[derive(Serialize, Deserialize)]
struct StoredArtifacts {
    behavior_label: String,
    seed: u64,
    records: Vec<(usize, usize, f64, f64)>,
    ground_truth: f64,
    model_table: Vec<Vec<f64>>,
}

struct Setup {
    env: Environment,
    behavior: Policy,
    target: Policy,
}

fn setup(spec: &ExperimentSpec) -> Result<Setup, RunError> {
    let env = build_environment(&spec.env)?;
    let behavior = make_policy(&env, &spec.behavior)?;
    let target = make_policy(&env, &spec.target)?;
    Ok(Setup { env, behavior, target })
}

fn compute_artifacts(spec: &ExperimentSpec, s: &Setup) -> Result<Artifacts, RunError> {
    let dataset = sample_log(&s.env, &s.behavior, spec.data.n, spec.data.seed)?;
    let ground_truth = true_policy_value(&s.env, &s.target)?;
    // The model is always fitted so the cached entry does not depend on the
    // estimator selection.
    let model = fit_reward_model(&dataset, ModelDims::from(&s.env), spec.reward_model)?;
    Ok(Artifacts {
        dataset,
        ground_truth,
        model,
    })
}

fn encode(a: &Artifacts) -> Vec<u8> {
    let stored = StoredArtifacts {
        behavior_label: a.dataset.behavior_label.clone(),
        seed: a.dataset.seed,
        records: a
            .dataset
            .records
            .iter()
            .map(|r| (r.context, r.action, r.reward, r.propensity))
            .collect(),
        ground_truth: a.ground_truth,
        model_table: a.model.table().to_vec(),
    };
    serde_json::to_vec(&stored).expect("artifacts serialize")
}

fn decode(bytes: &[u8], spec: &ExperimentSpec) -> Result<Artifacts, RunError> {
    let stored: StoredArtifacts =
        serde_json::from_slice(bytes).map_err(|e| RunError::CacheDecode(e.to_string()))?;
    let mut model = RewardModel::from_table(stored.model_table);
    model.set_kind(spec.reward_model);
    Ok(Artifacts {
        dataset: LoggedDataset {
            records: stored
                .records
                .into_iter()
                .map(|(context, action, reward, propensity)| LogRecord {
                    context,
                    action,
                    reward,
                    propensity,
                })
                .collect(),
            behavior_label: stored.behavior_label,
            seed: stored.seed,
        },
        ground_truth: stored.ground_truth,
        model,
    })
}

/// Builds the dataset, ground truth, and fitted model for a spec, going
/// through `cache` when one is given.
pub fn load_artifacts(spec: &ExperimentSpec, cache: Option<&ArtifactCache>) -> Result<Artifacts, RunError> {
    let s = setup(spec)?;
    match cache {
        None => compute_artifacts(spec, &s),
        Some(cache) => {
            let bytes = cache.get_or_compute(spec.artifact_key().as_bytes(), || {
                compute_artifacts(spec, &s).map(|a| encode(&a))
            })?;
            decode(&bytes, spec)
        }
    }
}

/// Evaluates every selected estimator against the exact ground truth.
/// Deterministic in `spec`; the cache never changes the result.
pub fn run_experiment(spec: &ExperimentSpec, cache: Option<&ArtifactCache>) -> Result<EstimatorReport, RunError> {
    let s = setup(spec)?;
    let artifacts = load_artifacts(spec, cache)?;
    let estimates = spec
        .estimators
        .iter()
        .map(|&kind| {
            estimate(
                kind,
                &artifacts.dataset,
                &s.target,
                Some(&artifacts.model),
                spec.weight_cap,
            )
            .map(|v| (kind, v))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EstimatorReport::new(&estimates, artifacts.ground_truth, spec.objective)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::PolicyKind;
    use crate::estimators::{Direction, EstimatorKind, Objective, ObjectiveMetric};
    use crate::spec::parse_spec;

    #[test]
    fn ipw_with_matching_policies_is_mean_reward() {
        let spec = ExperimentSpec {
            target: PolicyKind::UniformRandom,
            estimators: [EstimatorKind::Ipw].into_iter().collect(),
            objective: Objective {
                metric: ObjectiveMetric::RelativeEe(EstimatorKind::Ipw),
                direction: Direction::Minimize,
            },
            ..ExperimentSpec::default()
        };
        let report = run_experiment(&spec, None).unwrap();
        let artifacts = load_artifacts(&spec, None).unwrap();
        let ipw = report.row(EstimatorKind::Ipw).unwrap();
        assert!((ipw.estimate - artifacts.dataset.mean_reward()).abs() < 1e-12);
        assert_eq!(report.objective_value, ipw.relative_ee);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let spec = ExperimentSpec::default();
        let a = run_experiment(&spec, None).unwrap().to_csv_string();
        let b = run_experiment(&spec, None).unwrap().to_csv_string();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 6);
    }

    #[test]
    fn cache_does_not_change_reports() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ArtifactCache::open(dir.path()).unwrap();
        let spec = parse_spec("reward_model.kind = kernel\nreward_model.bandwidth = 0.7\n").unwrap();
        let cold = run_experiment(&spec, None).unwrap();
        let first = run_experiment(&spec, Some(&cache)).unwrap();
        let warm = run_experiment(&spec, Some(&cache)).unwrap();
        assert_eq!(cold.to_csv_string(), first.to_csv_string());
        assert_eq!(cold.to_csv_string(), warm.to_csv_string());
    }

    #[test]
    fn zeroed_target_aborts_snipw() {
        let text = "\
env.contexts = 1
env.actions = 2
env.q = 0.3, 0.7
behavior.kind = explicit
behavior.probs = 1, 0
target.kind = explicit
target.probs = 0, 1
estimators.use = snipw
objective.metric = relative_ee(snipw)
";
        let spec = parse_spec(text).unwrap();
        let err = run_experiment(&spec, None).unwrap_err();
        assert!(matches!(
            err,
            RunError::Estimator(EstimatorError::DegenerateSelfNormalization)
        ));
    }
}
