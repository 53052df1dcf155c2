//! Ground-truth values, the percentage error metric and the learning-curve
//! protocol.

mod cache;
mod env;
mod experiment;
mod rollouts;

pub use cache::{load_or_build_rollouts, CacheMetadata, CacheOutcome, RolloutCache};
pub use env::{sample_on_policy_states, Environment, FiniteMdpTask, MountainCarTask, NoiseFeatures};
pub use experiment::{
    evaluation_steps, fingerprint, run_experiment, sweep, write_curves_csv, write_sensitivity_csv, RunResult,
    SensitivityRow, StepTiming, SweepEntry, SweepOutput, DIVERGED_ERROR_CAP,
};
pub use rollouts::{monte_carlo_values, FiniteMdpSimulator, MountainCarSimulator, ReturnSimulator, RolloutStats};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureError;
use crate::learners::LearnerError;
use crate::mdp::{FiniteMdp, MdpError, Policy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("rollout cache {path} does not match the request: {reason}")]
    CacheMismatch { path: String, reason: String },
    #[error("evaluation state {index} has true value zero")]
    ZeroTrueValue { index: usize },
    #[error("evaluation set is empty")]
    EmptySet,
    #[error("feature dimension {got} does not match weights of dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Where the reference values came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueSource {
    Exact,
    MonteCarlo {
        n_rollouts: usize,
        gamma: f64,
        max_len: usize,
        seed: u64,
    },
}

/// Evaluation states with their reference values.
///
/// States whose reference value is exactly zero are dropped at construction
/// so the relative error is always defined.
#[derive(Clone, Debug)]
pub struct EvaluationSet {
    features: Vec<DVector<f64>>,
    true_values: Vec<f64>,
    raw_states: Vec<Vec<f64>>,
    std_errors: Vec<f64>,
    source: ValueSource,
}

impl EvaluationSet {
    /// `raw_states` and `std_errors` may be empty; otherwise they must have one
    /// entry per state.
    pub fn new(
        features: Vec<DVector<f64>>,
        true_values: Vec<f64>,
        raw_states: Vec<Vec<f64>>,
        std_errors: Vec<f64>,
        source: ValueSource,
    ) -> Result<Self, EvalError> {
        let n = features.len();
        if true_values.len() != n
            || (!raw_states.is_empty() && raw_states.len() != n)
            || (!std_errors.is_empty() && std_errors.len() != n)
        {
            return Err(EvalError::Invalid(format!(
                "evaluation set lengths disagree: {n} features, {} values, {} raw states, {} standard errors",
                true_values.len(),
                raw_states.len(),
                std_errors.len()
            )));
        }
        if let Some(d) = features.first().map(|x| x.len()) {
            if let Some(bad) = features.iter().find(|x| x.len() != d) {
                return Err(EvalError::Dimension { expected: d, got: bad.len() });
            }
        }
        let keep: Vec<usize> = (0..n).filter(|&i| true_values[i] != 0.0).collect();
        let pick = |v: &[f64]| -> Vec<f64> {
            if v.is_empty() {
                Vec::new()
            } else {
                keep.iter().map(|&i| v[i]).collect()
            }
        };
        Ok(EvaluationSet {
            features: keep.iter().map(|&i| features[i].clone()).collect(),
            true_values: pick(&true_values),
            std_errors: pick(&std_errors),
            raw_states: if raw_states.is_empty() {
                Vec::new()
            } else {
                keep.iter().map(|&i| raw_states[i].clone()).collect()
            },
            source,
        })
    }

    /// All states of a finite MDP with exact values; rows of `features` are states.
    pub fn exact(features: &DMatrix<f64>, values: &DVector<f64>) -> Result<Self, EvalError> {
        if features.nrows() != values.len() {
            return Err(EvalError::Invalid(format!(
                "{} feature rows for {} values",
                features.nrows(),
                values.len()
            )));
        }
        let rows = (0..features.nrows()).map(|s| features.row(s).transpose()).collect();
        let raw = (0..features.nrows()).map(|s| vec![s as f64]).collect();
        EvaluationSet::new(rows, values.iter().copied().collect(), raw, Vec::new(), ValueSource::Exact)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.features.first().map(|x| x.len())
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }

    pub fn true_values(&self) -> &[f64] {
        &self.true_values
    }

    pub fn raw_states(&self) -> &[Vec<f64>] {
        &self.raw_states
    }

    pub fn std_errors(&self) -> &[f64] {
        &self.std_errors
    }

    pub fn source(&self) -> &ValueSource {
        &self.source
    }
}

/// Mean over evaluation states of `|w^T x - v| / |v|`, as a fraction.
pub fn pct_abs_mean_error(w: &DVector<f64>, set: &EvaluationSet) -> Result<f64, EvalError> {
    if set.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut total = 0.0;
    for (i, (x, &v)) in set.features.iter().zip(&set.true_values).enumerate() {
        if v == 0.0 {
            return Err(EvalError::ZeroTrueValue { index: i });
        }
        if x.len() != w.len() {
            return Err(EvalError::Dimension { expected: w.len(), got: x.len() });
        }
        total += (w.dot(x) - v).abs() / v.abs();
    }
    Ok(total / set.len() as f64)
}

/// Exact state values `v = (I - P_g)^-1 r_pi` of a finite MDP under `policy`.
pub fn exact_values(mdp: &FiniteMdp, policy: &Policy) -> Result<DVector<f64>, EvalError> {
    let n = mdp.n_states();
    mdp.check_policy(policy)?;
    let p_gamma = mdp.discounted_transition_matrix(policy);
    let r = mdp.expected_reward(policy);
    let system = DMatrix::identity(n, n) - p_gamma;
    system
        .lu()
        .solve(&r)
        .ok_or_else(|| EvalError::Invalid("discounted transition matrix has spectral radius one".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{boyan_chain, boyan_true_values};

    fn tiny_set() -> EvaluationSet {
        let xs = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        ];
        EvaluationSet::new(xs, vec![2.0, -4.0, 0.0], Vec::new(), Vec::new(), ValueSource::Exact).unwrap()
    }

    #[test]
    fn zero_values_are_filtered() {
        let set = tiny_set();
        assert_eq!(set.len(), 2);
        assert_eq!(set.true_values(), &[2.0, -4.0]);
    }

    #[test]
    fn exact_prediction_has_zero_error() {
        let w = DVector::from_vec(vec![2.0, -4.0]);
        assert_eq!(pct_abs_mean_error(&w, &tiny_set()).unwrap(), 0.0);
    }

    #[test]
    fn doubled_prediction_has_unit_error() {
        let w = DVector::from_vec(vec![4.0, -8.0]);
        assert_eq!(pct_abs_mean_error(&w, &tiny_set()).unwrap(), 1.0);
    }

    #[test]
    fn zero_weights_on_boyan_give_unit_error() {
        let (mdp, x) = boyan_chain();
        let v = exact_values(&mdp, &Policy::uniform(13, 1)).unwrap();
        let set = EvaluationSet::exact(&x, &v).unwrap();
        assert_eq!(set.len(), 12);
        assert_eq!(pct_abs_mean_error(&DVector::zeros(4), &set).unwrap(), 1.0);
    }

    #[test]
    fn exact_values_on_boyan() {
        let (mdp, _) = boyan_chain();
        let v = exact_values(&mdp, &Policy::uniform(13, 1)).unwrap();
        assert!((v - boyan_true_values()).amax() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let r = EvaluationSet::new(vec![DVector::zeros(2)], vec![], Vec::new(), Vec::new(), ValueSource::Exact);
        assert!(r.is_err());
    }
}
