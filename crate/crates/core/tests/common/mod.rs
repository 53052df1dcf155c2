#![allow(dead_code)]

use atdlab::mdp::{exact_system, synthetic_lowrank_mdp, FiniteMdp, Policy, Weighting};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// A probability vector with every entry at least `floor / n`.
pub fn simplex_point(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0) + floor).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let drift = 1.0 - p.iter().sum::<f64>();
    p[0] += drift;
    p
}

/// Dense random MDP with constant discount and a uniform start.
pub fn random_mdp(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize, gamma: f64) -> FiniteMdp {
    let transition = (0..n_states)
        .map(|_| (0..n_actions).map(|_| simplex_point(rng, n_states, 0.05)).collect())
        .collect();
    let reward = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| (0..n_states).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    let mut start = vec![1.0 / n_states as f64; n_states];
    start[0] += 1.0 - start.iter().sum::<f64>();
    FiniteMdp::with_constant_discount(transition, reward, gamma, start).unwrap()
}

/// Policy with every action probability positive.
pub fn random_policy(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize) -> Policy {
    Policy::new((0..n_states).map(|_| simplex_point(rng, n_actions, 0.1)).collect()).unwrap()
}

/// Symmetric PSD matrix of the given rank.
pub fn random_psd(rng: &mut ChaCha8Rng, d: usize, rank: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, d, rank);
    &g * g.transpose()
}

/// Exact on-policy `(A, b)` of a random synthetic chain whose features have
/// the given rank, at `lambda`.
pub fn on_policy_system(seed: u64, d: usize, rank: usize, lambda: f64) -> (DMatrix<f64>, DVector<f64>) {
    let (mdp, x) = synthetic_lowrank_mdp(d + 10, d, rank, seed).unwrap();
    let pi = Policy::uniform(d + 10, 1);
    let sys = exact_system(&mdp, &pi, &pi, &x, lambda, Weighting::Stationary).unwrap();
    (sys.a_matrix, sys.b_vector)
}

/// Two states with scalar features 1 and 2; the behavior policy picks either
/// successor with probability 1/2, the target always moves to the second
/// state. Off-policy TD(0) diverges here for `gamma` near 1.
pub fn two_state_counterexample(gamma: f64) -> (FiniteMdp, Policy, Policy, DMatrix<f64>) {
    let to = |s: usize| if s == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
    let transition = vec![vec![to(0), to(1)], vec![to(0), to(1)]];
    let reward = vec![vec![vec![0.0; 2]; 2]; 2];
    let mdp = FiniteMdp::with_constant_discount(transition, reward, gamma, vec![0.5, 0.5]).unwrap();
    let behavior = Policy::uniform(2, 2);
    let target = Policy::deterministic(&[1, 1], 2);
    let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
    (mdp, behavior, target, x)
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
