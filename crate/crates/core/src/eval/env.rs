use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::features::{append_noise_features, tile_code, TileCodingConfig};
use crate::mdp::{BangBangPolicy, FiniteMdp, MountainCar, MountainCarState, Policy, TrajectorySampler, Transition};

/// A source of transition streams for learning experiments.
pub trait Environment: Sync {
    fn dimension(&self) -> usize;

    /// An endless stream of transitions, fully determined by `seed`.
    fn stream(&self, seed: u64) -> Result<Box<dyn Iterator<Item = Transition> + '_>, EvalError>;
}

#[derive(Clone, Debug)]
pub struct FiniteMdpTask {
    pub mdp: FiniteMdp,
    /// One row per state.
    pub features: DMatrix<f64>,
    pub behavior: Policy,
    pub target: Policy,
}

impl FiniteMdpTask {
    pub fn on_policy(mdp: FiniteMdp, features: DMatrix<f64>, policy: Policy) -> Self {
        FiniteMdpTask {
            mdp,
            features,
            behavior: policy.clone(),
            target: policy,
        }
    }
}

impl Environment for FiniteMdpTask {
    fn dimension(&self) -> usize {
        self.features.ncols()
    }

    fn stream(&self, seed: u64) -> Result<Box<dyn Iterator<Item = Transition> + '_>, EvalError> {
        let sampler = TrajectorySampler::new(&self.mdp, &self.behavior, &self.target, &self.features, seed)?;
        Ok(Box::new(sampler))
    }
}

/// Extra features of which a fresh random subset of `active` is set to one
/// on every observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseFeatures {
    pub extra: usize,
    pub active: usize,
}

/// Mountain car under a bang-bang policy with tile-coded features.
#[derive(Clone, Debug)]
pub struct MountainCarTask {
    pub tiles: TileCodingConfig,
    pub policy: BangBangPolicy,
    pub noise: Option<NoiseFeatures>,
}

impl MountainCarTask {
    pub fn new(tiles: TileCodingConfig, policy: BangBangPolicy, noise: Option<NoiseFeatures>) -> Result<Self, EvalError> {
        tiles.validate()?;
        if tiles.variable_ranges.len() != 2 {
            return Err(EvalError::Invalid(format!(
                "mountain car has 2 state variables, tile coding declares {}",
                tiles.variable_ranges.len()
            )));
        }
        if let Some(n) = noise {
            if n.active > n.extra {
                return Err(EvalError::Invalid(format!(
                    "{} active noise features out of {}",
                    n.active, n.extra
                )));
            }
        }
        Ok(MountainCarTask { tiles, policy, noise })
    }

    pub fn features<R: Rng + ?Sized>(&self, state: MountainCarState, rng: &mut R) -> DVector<f64> {
        let x = tile_code(&[state.position, state.velocity], &self.tiles);
        match self.noise {
            Some(n) => append_noise_features(&x, n.extra, n.active, rng)
                .expect("noise configuration validated at construction")
                .to_dense(),
            None => x.to_dense(),
        }
    }

    /// Feature vectors for evaluation states; noise features, if any, are
    /// drawn once from `seed`.
    pub fn evaluation_features(&self, states: &[MountainCarState], seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        states.iter().map(|&s| self.features(s, &mut rng)).collect()
    }
}

impl Environment for MountainCarTask {
    fn dimension(&self) -> usize {
        self.tiles.hash_dimension + self.noise.map_or(0, |n| n.extra)
    }

    fn stream(&self, seed: u64) -> Result<Box<dyn Iterator<Item = Transition> + '_>, EvalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = MountainCar::sample_start(&mut rng);
        let x = self.features(state, &mut rng);
        Ok(Box::new(MountainCarStream { task: self, rng, state, x }))
    }
}

struct MountainCarStream<'a> {
    task: &'a MountainCarTask,
    rng: ChaCha8Rng,
    state: MountainCarState,
    x: DVector<f64>,
}

impl Iterator for MountainCarStream<'_> {
    type Item = Transition;

    fn next(&mut self) -> Option<Transition> {
        let action = self.task.policy.action(self.state, &mut self.rng);
        let step = MountainCar::step(self.state, action);
        let x_next = self.task.features(step.next, &mut self.rng);
        let discount = if step.terminal { 0.0 } else { 1.0 };
        let tr = Transition::on_policy(self.x.clone(), x_next.clone(), step.reward, discount);
        if step.terminal {
            self.state = MountainCar::sample_start(&mut self.rng);
            self.x = self.task.features(self.state, &mut self.rng);
        } else {
            self.state = step.next;
            self.x = x_next;
        }
        Some(tr)
    }
}

/// Runs one on-policy trajectory of `trajectory_len` steps (restarting after
/// each episode) and picks `n_states` distinct time steps uniformly; returns
/// the states visited at those steps in time order.
pub fn sample_on_policy_states(
    policy: &BangBangPolicy,
    trajectory_len: usize,
    n_states: usize,
    seed: u64,
) -> Result<Vec<MountainCarState>, EvalError> {
    if n_states > trajectory_len {
        return Err(EvalError::Invalid(format!(
            "cannot sample {n_states} states from a trajectory of {trajectory_len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visited = Vec::with_capacity(trajectory_len);
    let mut state = MountainCar::sample_start(&mut rng);
    for _ in 0..trajectory_len {
        visited.push(state);
        let step = MountainCar::step(state, policy.action(state, &mut rng));
        state = if step.terminal {
            MountainCar::sample_start(&mut rng)
        } else {
            step.next
        };
    }
    let mut picks = index::sample(&mut rng, trajectory_len, n_states).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| visited[i]).collect())
}
