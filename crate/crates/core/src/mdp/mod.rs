//! Finite and continuous-state MDPs, policies, trajectory sampling and the
//! exact linear system `(A, b, C)` of small tabular problems.

mod boyan;
mod document;
mod exact;
mod mountain_car;
mod sampler;
mod synthetic;

pub use boyan::{boyan_chain, boyan_features, boyan_true_values, BOYAN_STATES};
pub use document::{DenseMatrixDoc, LoadedMdp, MdpDocument};
pub use exact::{exact_system, ExactSystem, Weighting};
pub use mountain_car::{BangBangPolicy, MountainCar, MountainCarState, MountainCarStep};
pub use sampler::{sample_trajectory, TrajectorySampler};
pub use synthetic::synthetic_lowrank_mdp;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

pub(crate) const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("target policy takes action {action} in state {state} but the behavior policy never does")]
    Coverage { state: usize, action: usize },
    #[error("stationary distribution did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("trace operator I - lambda * P_gamma is singular (spectral radius of lambda * P_gamma = {0})")]
    SingularTraceOperator(f64),
    #[error("infeasible shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One sample of experience, the unit every learner consumes.
///
/// `discount_next` is the discount of the transition out of `x` (gamma_{t+1});
/// an episode boundary is a transition with `discount_next == 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: DVector<f64>,
    pub x_next: DVector<f64>,
    pub reward: f64,
    pub discount_next: f64,
    pub rho: f64,
    pub interest: f64,
}

impl Transition {
    /// On-policy transition with unit interest.
    pub fn on_policy(x: DVector<f64>, x_next: DVector<f64>, reward: f64, discount_next: f64) -> Self {
        Transition {
            x,
            x_next,
            reward,
            discount_next,
            rho: 1.0,
            interest: 1.0,
        }
    }

    pub fn dimension(&self) -> usize {
        self.x.len()
    }
}

/// Tabular MDP with transition-based discounting.
#[derive(Clone, Debug)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    // indexed [s][a][s']
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<Vec<f64>>>,
    discount: Vec<Vec<Vec<f64>>>,
    start_distribution: Vec<f64>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<(), MdpError> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(MdpError::InvalidModel(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(MdpError::InvalidModel(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl FiniteMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<Vec<f64>>>,
        discount: Vec<Vec<Vec<f64>>>,
        start_distribution: Vec<f64>,
    ) -> Result<Self, MdpError> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(MdpError::InvalidModel("no states".into()));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(MdpError::InvalidModel("no actions".into()));
        }
        for (name, tensor) in [("transition", &transition), ("reward", &reward), ("discount", &discount)] {
            if tensor.len() != n_states
                || tensor
                    .iter()
                    .any(|row| row.len() != n_actions || row.iter().any(|r| r.len() != n_states))
            {
                return Err(MdpError::InvalidModel(format!(
                    "{name} tensor must have shape [{n_states}][{n_actions}][{n_states}]"
                )));
            }
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution(&transition[s][a], &format!("P({s},{a},.)"))?;
                if discount[s][a].iter().any(|&g| !(0.0..=1.0).contains(&g)) {
                    return Err(MdpError::InvalidModel(format!("discount at ({s},{a}) outside [0,1]")));
                }
                if reward[s][a].iter().any(|r| !r.is_finite()) {
                    return Err(MdpError::InvalidModel(format!("non-finite reward at ({s},{a})")));
                }
            }
        }
        if start_distribution.len() != n_states {
            return Err(MdpError::InvalidModel("start distribution has the wrong length".into()));
        }
        check_distribution(&start_distribution, "start distribution")?;
        Ok(FiniteMdp {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            start_distribution,
        })
    }

    /// MDP whose discount is the same constant on every transition.
    pub fn with_constant_discount(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<Vec<f64>>>,
        gamma: f64,
        start_distribution: Vec<f64>,
    ) -> Result<Self, MdpError> {
        let discount = transition
            .iter()
            .map(|row| row.iter().map(|p| vec![gamma; p.len()]).collect())
            .collect();
        Self::new(transition, reward, discount, start_distribution)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[s][a]
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[s][a][next]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[s][a][next]
    }

    pub fn discount(&self, s: usize, a: usize, next: usize) -> f64 {
        self.discount[s][a][next]
    }

    pub fn start_distribution(&self) -> &[f64] {
        &self.start_distribution
    }

    /// State-to-state matrix `P_pi(s, s')` under `policy`.
    pub fn state_transition_matrix(&self, policy: &Policy) -> DMatrix<f64> {
        let n = self.n_states;
        DMatrix::from_fn(n, n, |s, next| {
            (0..self.n_actions)
                .map(|a| policy.prob(s, a) * self.transition[s][a][next])
                .sum()
        })
    }

    /// Discount-weighted matrix `P_gamma(s, s') = sum_a pi(a|s) P(s,a,s') gamma(s,a,s')`.
    pub fn discounted_transition_matrix(&self, policy: &Policy) -> DMatrix<f64> {
        let n = self.n_states;
        DMatrix::from_fn(n, n, |s, next| {
            (0..self.n_actions)
                .map(|a| policy.prob(s, a) * self.transition[s][a][next] * self.discount[s][a][next])
                .sum()
        })
    }

    /// Expected one-step reward `r_pi(s)`.
    pub fn expected_reward(&self, policy: &Policy) -> DVector<f64> {
        DVector::from_fn(self.n_states, |s, _| {
            (0..self.n_actions)
                .map(|a| {
                    let inner: f64 = (0..self.n_states)
                        .map(|next| self.transition[s][a][next] * self.reward[s][a][next])
                        .sum();
                    policy.prob(s, a) * inner
                })
                .sum()
        })
    }

    pub(crate) fn check_policy(&self, policy: &Policy) -> Result<(), MdpError> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(MdpError::Shape(format!(
                "policy is {}x{} but the MDP has {} states and {} actions",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }
}

/// Stochastic policy: one probability vector over actions per state.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    action_probabilities: Vec<Vec<f64>>,
}

impl Policy {
    pub fn new(action_probabilities: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        if action_probabilities.is_empty() {
            return Err(MdpError::InvalidModel("policy has no states".into()));
        }
        let n_actions = action_probabilities[0].len();
        for (s, row) in action_probabilities.iter().enumerate() {
            if row.len() != n_actions {
                return Err(MdpError::InvalidModel(format!("policy row {s} has the wrong length")));
            }
            check_distribution(row, &format!("policy row {s}"))?;
        }
        Ok(Policy { action_probabilities })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            action_probabilities: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let action_probabilities = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Policy { action_probabilities }
    }

    pub fn n_states(&self) -> usize {
        self.action_probabilities.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_probabilities[0].len()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.action_probabilities[s][a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.action_probabilities[s]
    }
}

/// Draws an index from a probability vector.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Stationary distribution of the chain induced by `policy`.
///
/// Power iteration on the lazy chain `(I + P) / 2` started from the start
/// distribution, so periodic chains converge and a reducible chain yields the
/// distribution of the recurrent class reached from the start states.
pub fn stationary_distribution(mdp: &FiniteMdp, policy: &Policy) -> Result<DVector<f64>, MdpError> {
    const MAX_ITERATIONS: usize = 1_000_000;
    const TOLERANCE: f64 = 1e-13;

    mdp.check_policy(policy)?;
    let p_t = mdp.state_transition_matrix(policy).transpose();
    let mut d = DVector::from_column_slice(mdp.start_distribution());
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let next = &p_t * &d;
        residual = (&next - &d).lp_norm(1);
        if residual <= TOLERANCE {
            let sum = next.sum();
            return Ok(next / sum);
        }
        d = (next + &d) * 0.5;
    }
    Err(MdpError::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual,
    })
}
