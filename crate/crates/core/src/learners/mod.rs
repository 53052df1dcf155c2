//! Per-step policy-evaluation learners behind one interface.

mod atd;
mod lstd;
mod td;

pub use atd::{Atd, GeneralizedAtd, Tlstd};
pub use lstd::{FastLstd, Ilstd, Lstd, ProjectedLstd};
pub use td::{TdLambda, TrueOnlineTd};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::Transition;
use crate::svd::SvdError;
use crate::traces::TraceMode;

/// Weights with `||w||_inf` above this are reported as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("weights diverged at step {step} (max |w| = {max_abs:e})")]
    Divergence { step: usize, max_abs: f64 },
    #[error("invalid learner configuration: {0}")]
    Config(String),
    #[error("transition has dimension {got}, learner expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Svd(#[from] SvdError),
}

pub trait Learner: Send {
    fn observe(&mut self, tr: &Transition) -> Result<(), LearnerError>;

    fn weights(&self) -> &DVector<f64>;

    /// Number of transitions observed so far.
    fn step_count(&self) -> usize;

    fn predict(&self, x: &DVector<f64>) -> f64 {
        self.weights().dot(x)
    }
}

/// Weight vector plus the bookkeeping every learner shares: the discount and
/// importance ratio carried over from the previous transition (the trace at
/// time t uses the discount of the transition into the current state), and
/// the number of completed episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub w: DVector<f64>,
    pub step_count: usize,
    pub prev_discount: f64,
    pub prev_rho: f64,
    pub episodes: usize,
}

impl LinearModel {
    pub fn new(dimension: usize) -> Self {
        LinearModel {
            w: DVector::zeros(dimension),
            step_count: 0,
            prev_discount: 0.0,
            prev_rho: 1.0,
            episodes: 0,
        }
    }

    pub fn dimension(&self) -> usize {
        self.w.len()
    }

    pub(crate) fn check_input(&self, tr: &Transition) -> Result<(), LearnerError> {
        let d = self.dimension();
        for got in [tr.x.len(), tr.x_next.len()] {
            if got != d {
                return Err(LearnerError::Dimension { expected: d, got });
            }
        }
        Ok(())
    }

    /// `r + gamma' w^T x' - w^T x`.
    pub fn td_error(&self, tr: &Transition) -> f64 {
        tr.reward + tr.discount_next * self.w.dot(&tr.x_next) - self.w.dot(&tr.x)
    }

    /// Records the finished step and checks the weights.
    pub(crate) fn advance(&mut self, tr: &Transition) -> Result<(), LearnerError> {
        self.step_count += 1;
        self.prev_discount = tr.discount_next;
        self.prev_rho = tr.rho;
        if tr.discount_next == 0.0 {
            self.episodes += 1;
        }
        self.check_divergence()
    }

    pub(crate) fn check_divergence(&self) -> Result<(), LearnerError> {
        let max_abs = self.w.iter().fold(0.0_f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) });
        if max_abs.is_nan() || max_abs > DIVERGENCE_THRESHOLD {
            return Err(LearnerError::Divergence {
                step: self.step_count,
                max_abs,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    #[default]
    Constant,
    OneOverT,
    /// `alpha0 (n0 + 1) / (n0 + episodes)`.
    Boyan { n0: f64 },
}

/// Step size at update `t` (0-based) after `episodes` completed episodes.
pub fn step_schedule(schedule: Schedule, alpha0: f64, t: usize, episodes: usize) -> f64 {
    match schedule {
        Schedule::Constant => alpha0,
        Schedule::OneOverT => alpha0 / (t as f64 + 1.0),
        Schedule::Boyan { n0 } => alpha0 * (n0 + 1.0) / (n0 + episodes as f64),
    }
}

fn default_lambda() -> f64 {
    0.0
}
fn default_atd_alpha0() -> f64 {
    1.0
}
fn default_atd_eta() -> f64 {
    1e-4
}
fn default_pinv_threshold() -> f64 {
    1e-6
}
fn default_one_over_t() -> Schedule {
    Schedule::OneOverT
}
fn default_lstd_eta() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdConfig {
    pub alpha0: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub schedule: Schedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstdConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Initial regularizer: the inverse starts at `I / eta`.
    #[serde(default = "default_lstd_eta")]
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlstdConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub rank: usize,
    #[serde(default = "default_pinv_threshold")]
    pub pinv_rel_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectedLstdConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_lstd_eta")]
    pub eta: f64,
    /// Dimension of the projected feature space.
    pub rank: usize,
    #[serde(default)]
    pub projection_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FastLstdConfig {
    pub alpha0: f64,
    /// Batch size: after every `rank` new transitions, `rank` resampled TD(0) updates.
    pub rank: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_one_over_t")]
    pub schedule: Schedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtdConfig {
    #[serde(default = "default_atd_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_atd_eta")]
    pub eta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub rank: usize,
    #[serde(default = "default_pinv_threshold")]
    pub pinv_rel_threshold: f64,
    #[serde(default = "default_one_over_t")]
    pub schedule: Schedule,
    #[serde(default)]
    pub trace: TraceMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizedAtdConfig {
    #[serde(default = "default_atd_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_atd_eta")]
    pub eta: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub rank: usize,
    #[serde(default = "default_pinv_threshold")]
    pub pinv_rel_threshold: f64,
    #[serde(default = "default_one_over_t")]
    pub schedule: Schedule,
    #[serde(default)]
    pub trace: TraceMode,
    pub epsilon_avg: f64,
}

impl GeneralizedAtdConfig {
    pub fn base(&self) -> AtdConfig {
        AtdConfig {
            alpha0: self.alpha0,
            eta: self.eta,
            lambda: self.lambda,
            rank: self.rank,
            pinv_rel_threshold: self.pinv_rel_threshold,
            schedule: self.schedule,
            trace: self.trace,
        }
    }
}

/// Learner selection with its hyperparameters, as written in experiment
/// configs: `{"algorithm": "atd", "rank": 10, ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum LearnerConfig {
    Td(TdConfig),
    TrueOnlineTd(TdConfig),
    Etd(TdConfig),
    TrueOnlineEtd(TdConfig),
    Ilstd(TdConfig),
    Lstd(LstdConfig),
    Tlstd(TlstdConfig),
    ProjectedLstd(ProjectedLstdConfig),
    FastLstd(FastLstdConfig),
    Atd(AtdConfig),
    GeneralizedAtd(GeneralizedAtdConfig),
}

fn check_range(name: &str, value: f64, lo: f64, hi: f64) -> Result<(), LearnerError> {
    if !(value >= lo && value <= hi) {
        return Err(LearnerError::Config(format!("{name} = {value} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_positive(name: &str, value: f64) -> Result<(), LearnerError> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(LearnerError::Config(format!("{name} = {value} must be positive")));
    }
    Ok(())
}

fn check_schedule(schedule: Schedule) -> Result<(), LearnerError> {
    if let Schedule::Boyan { n0 } = schedule {
        check_positive("schedule.n0", n0)?;
    }
    Ok(())
}

fn check_atd(c: &AtdConfig) -> Result<(), LearnerError> {
    check_positive("alpha0", c.alpha0)?;
    check_range("eta", c.eta, 0.0, f64::MAX)?;
    check_range("lambda", c.lambda, 0.0, 1.0)?;
    check_range("pinv_rel_threshold", c.pinv_rel_threshold, 0.0, 1.0)?;
    check_schedule(c.schedule)
}

impl LearnerConfig {
    /// Short algorithm name used in output files.
    pub fn name(&self) -> &'static str {
        match self {
            LearnerConfig::Td(_) => "td",
            LearnerConfig::TrueOnlineTd(_) => "true_online_td",
            LearnerConfig::Etd(_) => "etd",
            LearnerConfig::TrueOnlineEtd(_) => "true_online_etd",
            LearnerConfig::Ilstd(_) => "ilstd",
            LearnerConfig::Lstd(_) => "lstd",
            LearnerConfig::Tlstd(_) => "tlstd",
            LearnerConfig::ProjectedLstd(_) => "projected_lstd",
            LearnerConfig::FastLstd(_) => "fast_lstd",
            LearnerConfig::Atd(_) => "atd",
            LearnerConfig::GeneralizedAtd(_) => "generalized_atd",
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            LearnerConfig::Td(c)
            | LearnerConfig::TrueOnlineTd(c)
            | LearnerConfig::Etd(c)
            | LearnerConfig::TrueOnlineEtd(c)
            | LearnerConfig::Ilstd(c) => c.lambda,
            LearnerConfig::Lstd(c) => c.lambda,
            LearnerConfig::Tlstd(c) => c.lambda,
            LearnerConfig::ProjectedLstd(c) => c.lambda,
            LearnerConfig::FastLstd(c) => c.lambda,
            LearnerConfig::Atd(c) => c.lambda,
            LearnerConfig::GeneralizedAtd(c) => c.lambda,
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        match self {
            LearnerConfig::Td(c)
            | LearnerConfig::TrueOnlineTd(c)
            | LearnerConfig::Etd(c)
            | LearnerConfig::TrueOnlineEtd(c)
            | LearnerConfig::Ilstd(c) => {
                check_positive("alpha0", c.alpha0)?;
                check_range("lambda", c.lambda, 0.0, 1.0)?;
                check_schedule(c.schedule)
            }
            LearnerConfig::Lstd(c) => {
                check_range("lambda", c.lambda, 0.0, 1.0)?;
                check_positive("eta", c.eta)
            }
            LearnerConfig::Tlstd(c) => {
                check_range("lambda", c.lambda, 0.0, 1.0)?;
                check_range("pinv_rel_threshold", c.pinv_rel_threshold, 0.0, 1.0)
            }
            LearnerConfig::ProjectedLstd(c) => {
                check_range("lambda", c.lambda, 0.0, 1.0)?;
                check_positive("eta", c.eta)?;
                if c.rank == 0 {
                    return Err(LearnerError::Config("projected_lstd needs rank >= 1".into()));
                }
                Ok(())
            }
            LearnerConfig::FastLstd(c) => {
                check_positive("alpha0", c.alpha0)?;
                if c.lambda != 0.0 {
                    return Err(LearnerError::Config(format!(
                        "fast_lstd is restricted to lambda = 0 (got {})",
                        c.lambda
                    )));
                }
                if c.rank == 0 {
                    return Err(LearnerError::Config("fast_lstd needs a batch size (rank) >= 1".into()));
                }
                check_schedule(c.schedule)
            }
            LearnerConfig::Atd(c) => check_atd(c),
            LearnerConfig::GeneralizedAtd(c) => {
                check_atd(&c.base())?;
                check_range("epsilon_avg", c.epsilon_avg, 0.0, 1.0)
            }
        }
    }

    /// Builds a fresh learner for `dimension`-dimensional features. `seed`
    /// drives any internal randomness that should vary between runs.
    pub fn build(&self, dimension: usize, seed: u64) -> Result<Box<dyn Learner>, LearnerError> {
        self.validate()?;
        Ok(match self {
            LearnerConfig::Td(c) => Box::new(TdLambda::new(dimension, c.clone(), TraceMode::Conventional)),
            LearnerConfig::Etd(c) => Box::new(TdLambda::new(dimension, c.clone(), TraceMode::Emphatic)),
            LearnerConfig::TrueOnlineTd(c) => Box::new(TrueOnlineTd::new(dimension, c.clone(), TraceMode::Conventional)),
            LearnerConfig::TrueOnlineEtd(c) => Box::new(TrueOnlineTd::new(dimension, c.clone(), TraceMode::Emphatic)),
            LearnerConfig::Ilstd(c) => Box::new(Ilstd::new(dimension, c.clone())),
            LearnerConfig::Lstd(c) => Box::new(Lstd::new(dimension, c.clone())),
            LearnerConfig::Tlstd(c) => Box::new(Tlstd::new(dimension, c.clone())),
            LearnerConfig::ProjectedLstd(c) => Box::new(ProjectedLstd::new(dimension, c.clone())),
            LearnerConfig::FastLstd(c) => Box::new(FastLstd::new(dimension, c.clone(), seed)?),
            LearnerConfig::Atd(c) => Box::new(Atd::new(dimension, c.clone())),
            LearnerConfig::GeneralizedAtd(c) => Box::new(GeneralizedAtd::new(dimension, c.clone())),
        })
    }

    /// Copy of this config with one field replaced, e.g. `("alpha0", 0.5)`.
    pub fn with_param(&self, name: &str, value: serde_json::Value) -> Result<Self, LearnerError> {
        let mut json = serde_json::to_value(self).map_err(|e| LearnerError::Config(e.to_string()))?;
        let obj = json
            .as_object_mut()
            .ok_or_else(|| LearnerError::Config("config is not an object".into()))?;
        obj.insert(name.to_string(), value);
        serde_json::from_value(json).map_err(|e| LearnerError::Config(format!("setting {name}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        assert_eq!(step_schedule(Schedule::Constant, 0.3, 10, 5), 0.3);
        assert_eq!(step_schedule(Schedule::OneOverT, 0.3, 0, 0), 0.3);
        assert_eq!(step_schedule(Schedule::OneOverT, 1.0, 3, 0), 0.25);
        let n0 = 10.0;
        assert!((step_schedule(Schedule::Boyan { n0 }, 0.5, 0, 0) - 0.5 * 11.0 / 10.0).abs() < 1e-15);
        let slow = step_schedule(Schedule::Boyan { n0: 1e6 }, 0.5, 0, 100);
        assert!((slow / 0.5 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn config_roundtrip_and_defaults() {
        let cfg: LearnerConfig = serde_json::from_str(r#"{"algorithm": "atd", "rank": 5}"#).unwrap();
        let LearnerConfig::Atd(ref atd) = cfg else { panic!("expected atd") };
        assert_eq!((atd.alpha0, atd.eta, atd.pinv_rel_threshold), (1.0, 1e-4, 1e-6));
        assert_eq!(atd.schedule, Schedule::OneOverT);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<LearnerConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = serde_json::from_str::<LearnerConfig>(r#"{"algorithm": "td", "alpha0": 0.1, "rank": 3}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<LearnerConfig>(r#"{"algorithm": "td"}"#).unwrap_err();
        assert!(err.to_string().contains("alpha0"));
    }

    #[test]
    fn fast_lstd_requires_lambda_zero() {
        let cfg: LearnerConfig = serde_json::from_str(r#"{"algorithm": "fast_lstd", "alpha0": 0.1, "rank": 4, "lambda": 0.5}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(LearnerError::Config(_))));
        assert!(cfg.build(4, 0).is_err());
    }

    #[test]
    fn with_param_replaces_field() {
        let cfg: LearnerConfig = serde_json::from_str(r#"{"algorithm": "td", "alpha0": 0.1}"#).unwrap();
        let changed = cfg.with_param("lambda", serde_json::json!(0.9)).unwrap();
        assert_eq!(changed.lambda(), 0.9);
        assert!(cfg.with_param("bogus", serde_json::json!(1)).is_err());
    }
}
