use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sample_index, FiniteMdp, MdpError, Policy, Transition};

/// Streams transitions from a finite MDP under a behavior policy, with
/// importance ratios toward a target policy.
///
/// The stream is continuing: episode ends are whatever transitions the MDP
/// gives discount zero, and the chain keeps running from the next state.
#[derive(Clone, Debug)]
pub struct TrajectorySampler<'a> {
    mdp: &'a FiniteMdp,
    behavior: &'a Policy,
    target: &'a Policy,
    rows: Vec<DVector<f64>>,
    rng: ChaCha8Rng,
    state: usize,
}

impl<'a> TrajectorySampler<'a> {
    pub fn new(
        mdp: &'a FiniteMdp,
        behavior: &'a Policy,
        target: &'a Policy,
        features: &DMatrix<f64>,
        seed: u64,
    ) -> Result<Self, MdpError> {
        mdp.check_policy(behavior)?;
        mdp.check_policy(target)?;
        if features.nrows() != mdp.n_states() {
            return Err(MdpError::Shape(format!(
                "feature matrix has {} rows for {} states",
                features.nrows(),
                mdp.n_states()
            )));
        }
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                if target.prob(s, a) > 0.0 && behavior.prob(s, a) == 0.0 {
                    return Err(MdpError::Coverage { state: s, action: a });
                }
            }
        }
        let rows = (0..features.nrows())
            .map(|s| features.row(s).transpose())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = sample_index(mdp.start_distribution(), &mut rng);
        Ok(TrajectorySampler {
            mdp,
            behavior,
            target,
            rows,
            rng,
            state,
        })
    }

    /// Current state index.
    pub fn state(&self) -> usize {
        self.state
    }

    /// Advances one step and returns the state the step started in with the transition.
    pub fn step(&mut self) -> (usize, Transition) {
        let s = self.state;
        let a = sample_index(self.behavior.row(s), &mut self.rng);
        let next = sample_index(self.mdp.transition_row(s, a), &mut self.rng);
        let rho = self.target.prob(s, a) / self.behavior.prob(s, a);
        let tr = Transition {
            x: self.rows[s].clone(),
            x_next: self.rows[next].clone(),
            reward: self.mdp.reward(s, a, next),
            discount_next: self.mdp.discount(s, a, next),
            rho,
            interest: 1.0,
        };
        self.state = next;
        (s, tr)
    }
}

impl Iterator for TrajectorySampler<'_> {
    type Item = Transition;

    fn next(&mut self) -> Option<Transition> {
        Some(self.step().1)
    }
}

/// Samples `max_steps` transitions; deterministic given `seed`.
pub fn sample_trajectory(
    mdp: &FiniteMdp,
    behavior: &Policy,
    target: &Policy,
    features: &DMatrix<f64>,
    max_steps: usize,
    seed: u64,
) -> Result<Vec<Transition>, MdpError> {
    let sampler = TrajectorySampler::new(mdp, behavior, target, features, seed)?;
    Ok(sampler.take(max_steps).collect())
}
