use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{stationary_distribution, FiniteMdp, MdpError, Policy};
use crate::linalg;

/// State weighting of the projected Bellman system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `m = d_mu`, the weighting of conventional TD(lambda).
    Stationary,
    /// The emphatic weighting built from the follow-on trace.
    Emphatic,
}

/// Dense expected system `A w = b` with `C = E[x x^T]`.
#[derive(Clone, Debug)]
pub struct ExactSystem {
    pub a_matrix: DMatrix<f64>,
    pub b_vector: DVector<f64>,
    pub c_matrix: DMatrix<f64>,
    pub weighting: Weighting,
    pub lambda: f64,
    /// Per-state weighting `m(s)` that produced `a_matrix`.
    pub state_weights: DVector<f64>,
    /// Stationary distribution of the behavior policy.
    pub d_mu: DVector<f64>,
}

impl ExactSystem {
    /// TD fixed point `A^+ b`.
    pub fn td_fixed_point(&self) -> DVector<f64> {
        linalg::pseudo_inverse(&self.a_matrix, 1e-10) * &self.b_vector
    }

    /// `|| A A^+ b - b ||`, zero when the system is consistent.
    pub fn consistency_residual(&self) -> f64 {
        let w = self.td_fixed_point();
        (&self.a_matrix * w - &self.b_vector).norm()
    }
}

const MAX_ANALYSIS_DIM: usize = 200;

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Closed-form expected system for a tabular MDP.
///
/// With `P_g(s,s') = sum_a pi(a|s) P(s,a,s') gamma(s,a,s')` and state
/// weighting `m`:
/// `A = X^T diag(m) (I - lambda P_g)^-1 (I - P_g) X`,
/// `b = X^T diag(m) (I - lambda P_g)^-1 r_pi`, `C = X^T D_mu X`.
/// For the emphatic weighting `m = lambda d_mu + (1 - lambda) f` with the
/// follow-on vector `f = (I - P_g^T)^-1 d_mu` (unit interest).
pub fn exact_system(
    mdp: &FiniteMdp,
    target: &Policy,
    behavior: &Policy,
    features: &DMatrix<f64>,
    lambda: f64,
    weighting: Weighting,
) -> Result<ExactSystem, MdpError> {
    let n = mdp.n_states();
    let d = features.ncols();
    if features.nrows() != n {
        return Err(MdpError::Shape(format!("feature matrix has {} rows for {n} states", features.nrows())));
    }
    if d > MAX_ANALYSIS_DIM {
        return Err(MdpError::Shape(format!("feature dimension {d} exceeds the analysis limit {MAX_ANALYSIS_DIM}")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MdpError::InvalidModel(format!("lambda = {lambda} outside [0, 1]")));
    }
    mdp.check_policy(target)?;
    mdp.check_policy(behavior)?;
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            if target.prob(s, a) > 0.0 && behavior.prob(s, a) == 0.0 {
                return Err(MdpError::Coverage { state: s, action: a });
            }
        }
    }

    let d_mu = stationary_distribution(mdp, behavior)?;
    let p_gamma = mdp.discounted_transition_matrix(target);
    let r_pi = mdp.expected_reward(target);
    let identity = DMatrix::<f64>::identity(n, n);

    let trace_op = &p_gamma * lambda;
    let radius = spectral_radius(&trace_op);
    if radius >= 1.0 - 1e-12 {
        return Err(MdpError::SingularTraceOperator(radius));
    }
    let trace_inv = (&identity - &trace_op)
        .try_inverse()
        .ok_or(MdpError::SingularTraceOperator(radius))?;

    let state_weights = match weighting {
        Weighting::Stationary => d_mu.clone(),
        Weighting::Emphatic => {
            let radius = spectral_radius(&p_gamma);
            if radius >= 1.0 - 1e-12 {
                return Err(MdpError::SingularTraceOperator(radius));
            }
            let follow_on = (&identity - p_gamma.transpose())
                .lu()
                .solve(&d_mu)
                .ok_or(MdpError::SingularTraceOperator(radius))?;
            &d_mu * lambda + follow_on * (1.0 - lambda)
        }
    };

    let weighted_x_t = features.transpose() * DMatrix::from_diagonal(&state_weights);
    let left = &weighted_x_t * &trace_inv;
    let a_matrix = &left * (&identity - &p_gamma) * features;
    let b_vector = &left * r_pi;
    let c_matrix = features.transpose() * DMatrix::from_diagonal(&d_mu) * features;

    Ok(ExactSystem {
        a_matrix,
        b_vector,
        c_matrix,
        weighting,
        lambda,
        state_weights,
        d_mu,
    })
}
