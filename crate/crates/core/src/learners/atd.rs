use nalgebra::DVector;

use super::{step_schedule, AtdConfig, GeneralizedAtdConfig, Learner, LearnerError, LinearModel, TlstdConfig};
use crate::mdp::Transition;
use crate::svd::LowRankFactors;
use crate::traces::{TraceMode, TraceState};

/// Folds `e (x - gamma' x')^T` into the running average of the factors with
/// weight `1 / (t + 1)`.
fn update_average(factors: &mut LowRankFactors, t: usize, e: &DVector<f64>, tr: &Transition) -> Result<(), LearnerError> {
    let beta = 1.0 / (t as f64 + 1.0);
    let decay = if t == 0 { 1.0 } else { 1.0 - beta };
    let root = beta.sqrt();
    let dx = (&tr.x - &tr.x_next * tr.discount_next) * root;
    factors.update(decay, &(e * root), &dx)?;
    Ok(())
}

/// ATD(lambda): TD(lambda) preconditioned by the pseudo-inverse of a rank-k
/// running estimate of `A`,
/// `w <- w + (alpha_t A_hat^+ + eta I) delta e`.
#[derive(Clone, Debug)]
pub struct Atd {
    model: LinearModel,
    trace: TraceState,
    factors: LowRankFactors,
    config: AtdConfig,
}

impl Atd {
    pub fn new(dimension: usize, config: AtdConfig) -> Self {
        Atd {
            model: LinearModel::new(dimension),
            trace: TraceState::new(dimension, config.trace),
            factors: LowRankFactors::new(dimension, config.rank),
            config,
        }
    }

    pub fn factors(&self) -> &LowRankFactors {
        &self.factors
    }
}

impl Learner for Atd {
    fn observe(&mut self, tr: &Transition) -> Result<(), LearnerError> {
        let m = &mut self.model;
        m.check_input(tr)?;
        let delta = m.td_error(tr);
        self.trace
            .step(&tr.x, m.prev_discount, self.config.lambda, m.prev_rho, tr.rho, tr.interest);
        update_average(&mut self.factors, m.step_count, &self.trace.e, tr)?;

        let alpha = step_schedule(self.config.schedule, self.config.alpha0, m.step_count, m.episodes);
        let g = &self.trace.e * delta;
        if self.factors.rank() > 0 {
            let precond = self.factors.apply_pinv(&g, self.config.pinv_rel_threshold);
            m.w.axpy(alpha, &precond, 1.0);
        }
        m.w.axpy(self.config.eta, &g, 1.0);
        m.advance(tr)
    }

    fn weights(&self) -> &DVector<f64> {
        &self.model.w
    }

    fn step_count(&self) -> usize {
        self.model.step_count
    }
}

/// ATD with an averaged reward vector, interpolating between TD (`epsilon = 0`)
/// and an exponentially weighted LSTD (`epsilon = 1`):
/// `delta_eps = (1 - eps) r + gamma' w^T x' - w^T x`,
/// `w <- w + (alpha_t A_hat^+ + eta I)(eps b + delta_eps e)`.
#[derive(Clone, Debug)]
pub struct GeneralizedAtd {
    model: LinearModel,
    trace: TraceState,
    factors: LowRankFactors,
    b: DVector<f64>,
    config: GeneralizedAtdConfig,
}

impl GeneralizedAtd {
    pub fn new(dimension: usize, config: GeneralizedAtdConfig) -> Self {
        GeneralizedAtd {
            model: LinearModel::new(dimension),
            trace: TraceState::new(dimension, config.trace),
            factors: LowRankFactors::new(dimension, config.rank),
            b: DVector::zeros(dimension),
            config,
        }
    }

    /// Starts from `w` instead of the zero vector.
    pub fn with_initial_weights(mut self, w: DVector<f64>) -> Self {
        assert_eq!(w.len(), self.model.dimension(), "initial weights have the wrong dimension");
        self.model.w = w;
        self
    }
}

impl Learner for GeneralizedAtd {
    fn observe(&mut self, tr: &Transition) -> Result<(), LearnerError> {
        let m = &mut self.model;
        m.check_input(tr)?;
        let eps = self.config.epsilon_avg;
        let delta = (1.0 - eps) * tr.reward + tr.discount_next * m.w.dot(&tr.x_next) - m.w.dot(&tr.x);
        self.trace
            .step(&tr.x, m.prev_discount, self.config.lambda, m.prev_rho, tr.rho, tr.interest);
        update_average(&mut self.factors, m.step_count, &self.trace.e, tr)?;
        let beta = 1.0 / (m.step_count as f64 + 1.0);
        self.b.scale_mut(1.0 - beta);
        self.b.axpy(beta * tr.reward, &self.trace.e, 1.0);

        let alpha = step_schedule(self.config.schedule, self.config.alpha0, m.step_count, m.episodes);
        let mut g = &self.trace.e * delta;
        if eps != 0.0 {
            g.axpy(eps, &self.b, 1.0);
        }
        if self.factors.rank() > 0 {
            let precond = self.factors.apply_pinv(&g, self.config.pinv_rel_threshold);
            m.w.axpy(alpha, &precond, 1.0);
        }
        m.w.axpy(self.config.eta, &g, 1.0);
        m.advance(tr)
    }

    fn weights(&self) -> &DVector<f64> {
        &self.model.w
    }

    fn step_count(&self) -> usize {
        self.model.step_count
    }
}

/// Truncated LSTD: `w = A_hat^+ b` from the rank-k running averages.
#[derive(Clone, Debug)]
pub struct Tlstd {
    model: LinearModel,
    trace: TraceState,
    factors: LowRankFactors,
    b: DVector<f64>,
    config: TlstdConfig,
}

impl Tlstd {
    pub fn new(dimension: usize, config: TlstdConfig) -> Self {
        Tlstd {
            model: LinearModel::new(dimension),
            trace: TraceState::new(dimension, TraceMode::Conventional),
            factors: LowRankFactors::new(dimension, config.rank),
            b: DVector::zeros(dimension),
            config,
        }
    }
}

impl Learner for Tlstd {
    fn observe(&mut self, tr: &Transition) -> Result<(), LearnerError> {
        let m = &mut self.model;
        m.check_input(tr)?;
        self.trace.update(&tr.x, m.prev_discount, self.config.lambda, tr.rho);
        update_average(&mut self.factors, m.step_count, &self.trace.e, tr)?;
        let beta = 1.0 / (m.step_count as f64 + 1.0);
        self.b.scale_mut(1.0 - beta);
        self.b.axpy(beta * tr.reward, &self.trace.e, 1.0);
        m.w = self.factors.apply_pinv(&self.b, self.config.pinv_rel_threshold);
        m.advance(tr)
    }

    fn weights(&self) -> &DVector<f64> {
        &self.model.w
    }

    fn step_count(&self) -> usize {
        self.model.step_count
    }
}
