use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalError, EvaluationSet, ValueSource};
use crate::mdp::{sample_index, BangBangPolicy, FiniteMdp, MountainCar, MountainCarState, Policy};

/// An environment that can be reset to an arbitrary state and simulated
/// forward under a fixed policy.
pub trait ReturnSimulator: Sync {
    type State: Sync;

    /// One sampled return from `start`. Reward `k` is weighted by
    /// `gamma^k` times the product of the environment's own discounts up to
    /// it; the sum stops after `max_len` rewards or once that weight is zero.
    fn sample_return(&self, start: &Self::State, gamma: f64, max_len: usize, rng: &mut ChaCha8Rng) -> f64;
}

#[derive(Clone, Copy, Debug)]
pub struct FiniteMdpSimulator<'a> {
    pub mdp: &'a FiniteMdp,
    pub policy: &'a Policy,
}

impl ReturnSimulator for FiniteMdpSimulator<'_> {
    type State = usize;

    fn sample_return(&self, start: &usize, gamma: f64, max_len: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mut s = *start;
        let mut weight = 1.0;
        let mut ret = 0.0;
        for _ in 0..max_len {
            let a = sample_index(self.policy.row(s), rng);
            let next = sample_index(self.mdp.transition_row(s, a), rng);
            ret += weight * self.mdp.reward(s, a, next);
            weight *= gamma * self.mdp.discount(s, a, next);
            if weight == 0.0 {
                break;
            }
            s = next;
        }
        ret
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MountainCarSimulator {
    pub policy: BangBangPolicy,
}

impl ReturnSimulator for MountainCarSimulator {
    type State = MountainCarState;

    fn sample_return(&self, start: &MountainCarState, gamma: f64, max_len: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mut state = *start;
        let mut weight = 1.0;
        let mut ret = 0.0;
        for _ in 0..max_len {
            let step = MountainCar::step(state, self.policy.action(state, rng));
            ret += weight * step.reward;
            weight *= gamma;
            if step.terminal || weight == 0.0 {
                break;
            }
            state = step.next;
        }
        ret
    }
}

/// Per-state sample mean and standard error of the return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl RolloutStats {
    pub fn into_evaluation_set(
        self,
        features: Vec<DVector<f64>>,
        raw_states: Vec<Vec<f64>>,
        source: ValueSource,
    ) -> Result<EvaluationSet, EvalError> {
        EvaluationSet::new(features, self.means, raw_states, self.std_errors, source)
    }
}

/// Monte Carlo estimate of the value of every state in `states`.
///
/// State `i` draws from its own ChaCha stream `i` under `seed`, so the result
/// does not depend on how the work is scheduled.
pub fn monte_carlo_values<S: ReturnSimulator>(
    sim: &S,
    states: &[S::State],
    n_rollouts: usize,
    gamma: f64,
    max_len: usize,
    seed: u64,
) -> RolloutStats {
    let per_state: Vec<(f64, f64)> = states
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let returns: Vec<f64> = (0..n_rollouts)
                .map(|_| sim.sample_return(start, gamma, max_len, &mut rng))
                .collect();
            mean_and_std_error(&returns)
        })
        .collect();
    RolloutStats {
        means: per_state.iter().map(|p| p.0).collect(),
        std_errors: per_state.iter().map(|p| p.1).collect(),
    }
}

fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
