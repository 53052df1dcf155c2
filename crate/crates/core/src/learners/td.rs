use nalgebra::DVector;

use super::{step_schedule, Learner, LearnerError, LinearModel, TdConfig};
use crate::mdp::Transition;
use crate::traces::{TraceMode, TraceState};

/// TD(lambda) with a conventional trace, or ETD(lambda) with an emphatic one.
#[derive(Clone, Debug)]
pub struct TdLambda {
    model: LinearModel,
    trace: TraceState,
    config: TdConfig,
}

impl TdLambda {
    pub fn new(dimension: usize, config: TdConfig, mode: TraceMode) -> Self {
        TdLambda {
            model: LinearModel::new(dimension),
            trace: TraceState::new(dimension, mode),
            config,
        }
    }

    pub fn trace(&self) -> &TraceState {
        &self.trace
    }
}

impl Learner for TdLambda {
    fn observe(&mut self, tr: &Transition) -> Result<(), LearnerError> {
        let m = &mut self.model;
        m.check_input(tr)?;
        let delta = m.td_error(tr);
        self.trace
            .step(&tr.x, m.prev_discount, self.config.lambda, m.prev_rho, tr.rho, tr.interest);
        let alpha = step_schedule(self.config.schedule, self.config.alpha0, m.step_count, m.episodes);
        m.w.axpy(alpha * delta, &self.trace.e, 1.0);
        m.advance(tr)
    }

    fn weights(&self) -> &DVector<f64> {
        &self.model.w
    }

    fn step_count(&self) -> usize {
        self.model.step_count
    }
}

/// True online TD(lambda) and true online ETD(lambda) in the off-policy
/// dutch-trace form:
///
/// `e <- rho (gamma lambda e + alpha M (1 - rho gamma lambda e^T x) x)`,
/// `w <- w + delta e + (e - alpha M rho x) (w - w_prev)^T x`,
///
/// with `M = 1` for the conventional variant.
#[derive(Clone, Debug)]
pub struct TrueOnlineTd {
    model: LinearModel,
    w_prev: DVector<f64>,
    e: DVector<f64>,
    follow_on: f64,
    mode: TraceMode,
    config: TdConfig,
}

impl TrueOnlineTd {
    pub fn new(dimension: usize, config: TdConfig, mode: TraceMode) -> Self {
        TrueOnlineTd {
            model: LinearModel::new(dimension),
            w_prev: DVector::zeros(dimension),
            e: DVector::zeros(dimension),
            follow_on: 0.0,
            mode,
            config,
        }
    }
}

impl Learner for TrueOnlineTd {
    fn observe(&mut self, tr: &Transition) -> Result<(), LearnerError> {
        let m = &mut self.model;
        m.check_input(tr)?;
        let lambda = self.config.lambda;
        let gamma = m.prev_discount;
        let alpha = step_schedule(self.config.schedule, self.config.alpha0, m.step_count, m.episodes);
        let emphasis = match self.mode {
            TraceMode::Conventional => 1.0,
            TraceMode::Emphatic => {
                self.follow_on = m.prev_rho * gamma * self.follow_on + tr.interest;
                lambda * tr.interest + (1.0 - lambda) * self.follow_on
            }
        };

        let delta = m.td_error(tr);
        let decay = gamma * lambda;
        let ex = self.e.dot(&tr.x);
        self.e.scale_mut(decay);
        self.e.axpy(alpha * emphasis * (1.0 - tr.rho * decay * ex), &tr.x, 1.0);
        self.e.scale_mut(tr.rho);

        let memory = (&m.w - &self.w_prev).dot(&tr.x);
        self.w_prev.copy_from(&m.w);
        m.w.axpy(delta, &self.e, 1.0);
        if memory != 0.0 {
            m.w.axpy(memory, &self.e, 1.0);
            m.w.axpy(-memory * alpha * emphasis * tr.rho, &tr.x, 1.0);
        }
        m.advance(tr)
    }

    fn weights(&self) -> &DVector<f64> {
        &self.model.w
    }

    fn step_count(&self) -> usize {
        self.model.step_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::Schedule;

    fn td_config(alpha0: f64, lambda: f64) -> TdConfig {
        TdConfig {
            alpha0,
            lambda,
            schedule: Schedule::Constant,
        }
    }

    fn unit(d: usize, i: usize) -> DVector<f64> {
        let mut x = DVector::zeros(d);
        x[i] = 1.0;
        x
    }

    #[test]
    fn tabular_two_state_chain_converges() {
        // 0 -> 1 (reward 1, gamma 0.5), 1 -> 0 (reward 2, gamma 0.5).
        let mut td = TdLambda::new(2, td_config(1.0, 0.0), TraceMode::Conventional);
        let a = Transition::on_policy(unit(2, 0), unit(2, 1), 1.0, 0.5);
        let b = Transition::on_policy(unit(2, 1), unit(2, 0), 2.0, 0.5);
        for _ in 0..60 {
            td.observe(&a).unwrap();
            td.observe(&b).unwrap();
        }
        // v0 = 1 + 0.5 v1, v1 = 2 + 0.5 v0.
        let (v0, v1) = (8.0 / 3.0, 10.0 / 3.0);
        assert!((td.weights()[0] - v0).abs() < 1e-12);
        assert!((td.weights()[1] - v1).abs() < 1e-12);
    }

    #[test]
    fn zero_td_error_leaves_weights() {
        let mut td = TdLambda::new(2, td_config(0.5, 0.9), TraceMode::Conventional);
        td.observe(&Transition::on_policy(unit(2, 0), unit(2, 1), 0.0, 1.0)).unwrap();
        assert_eq!(td.weights(), &DVector::zeros(2));
    }

    #[test]
    fn etd_first_step() {
        let mut etd = TdLambda::new(2, td_config(0.1, 0.3), TraceMode::Emphatic);
        let mut tr = Transition::on_policy(DVector::from_vec(vec![1.0, 2.0]), unit(2, 0), 2.0, 0.9);
        tr.rho = 1.5;
        etd.observe(&tr).unwrap();
        // F = 1, M = 1, e = rho x.
        let expected = DVector::from_vec(vec![1.0, 2.0]) * (0.1 * 2.0 * 1.5);
        assert!((etd.weights() - expected).norm() < 1e-15);
    }

    #[test]
    fn true_online_zero_reward_stays_zero() {
        let mut to = TrueOnlineTd::new(3, td_config(0.2, 0.8), TraceMode::Conventional);
        for i in 0..10 {
            to.observe(&Transition::on_policy(unit(3, i % 3), unit(3, (i + 1) % 3), 0.0, 0.9)).unwrap();
        }
        assert_eq!(to.weights(), &DVector::zeros(3));
    }

    #[test]
    fn divergence_is_reported() {
        let mut td = TdLambda::new(1, td_config(1.0, 0.0), TraceMode::Conventional);
        let x = DVector::from_element(1, 1.0);
        let tr = Transition::on_policy(x.clone(), x * 2.0, 1.0, 1.0);
        let mut result = Ok(());
        for _ in 0..200 {
            result = td.observe(&tr);
            if result.is_err() {
                break;
            }
        }
        assert!(matches!(result, Err(LearnerError::Divergence { .. })));
    }
}
