mod common;

use atdlab::eval::exact_values;
use atdlab::mdp::{
    boyan_chain, boyan_true_values, exact_system, sample_trajectory, stationary_distribution, synthetic_lowrank_mdp,
    Policy, TrajectorySampler, Weighting,
};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Trace-weighted sample average of `e (x - gamma' x')^T` over a prefix.
fn sampled_a(stream: &[atdlab::mdp::Transition], lambda: f64) -> DMatrix<f64> {
    let d = stream[0].x.len();
    let mut e = DVector::zeros(d);
    let mut gamma_prev = 0.0;
    let mut sum = DMatrix::zeros(d, d);
    for tr in stream {
        e = e * (gamma_prev * lambda) + &tr.x;
        sum += &e * (&tr.x - &tr.x_next * tr.discount_next).transpose();
        gamma_prev = tr.discount_next;
    }
    sum / stream.len() as f64
}

#[test]
fn sampled_a_converges_to_exact() {
    let mut rng = rng(1);
    let mdp = random_mdp(&mut rng, 5, 2, 0.8);
    let pi = random_policy(&mut rng, 5, 2);
    let x = gaussian_matrix(&mut rng, 5, 3);
    let lambda = 0.5;
    let exact = exact_system(&mdp, &pi, &pi, &x, lambda, Weighting::Stationary).unwrap();
    let stream = sample_trajectory(&mdp, &pi, &pi, &x, 1_000_000, 2).unwrap();
    let err = (sampled_a(&stream, lambda) - &exact.a_matrix).norm();
    assert!(err < 1e-2, "Frobenius error {err}");
}

#[test]
fn sampled_a_error_halves_when_samples_quadruple() {
    let mut rng = rng(3);
    let mdp = random_mdp(&mut rng, 5, 2, 0.8);
    let pi = random_policy(&mut rng, 5, 2);
    let x = gaussian_matrix(&mut rng, 5, 3);
    let exact = exact_system(&mdp, &pi, &pi, &x, 0.0, Weighting::Stationary).unwrap();
    let n = 20_000;
    let (mut small, mut large) = (0.0, 0.0);
    for seed in 0..24 {
        let stream = sample_trajectory(&mdp, &pi, &pi, &x, 4 * n, 100 + seed).unwrap();
        small += (sampled_a(&stream[..n], 0.0) - &exact.a_matrix).norm_squared();
        large += (sampled_a(&stream, 0.0) - &exact.a_matrix).norm_squared();
    }
    let ratio = (large / small).sqrt();
    assert!((0.35..0.7).contains(&ratio), "rms ratio {ratio}");
}

#[test]
fn stationary_distribution_solves_balance_equations() {
    let mut rng = rng(4);
    for _ in 0..10 {
        let n = rng.random_range(2..12);
        let mdp = random_mdp(&mut rng, n, 3, 0.9);
        let pi = random_policy(&mut rng, n, 3);
        let d = stationary_distribution(&mdp, &pi).unwrap();

        // least squares on [P^T - I; 1^T] d = [0; 1]
        let p_t = mdp.state_transition_matrix(&pi).transpose();
        let mut system = DMatrix::zeros(n + 1, n);
        system.view_mut((0, 0), (n, n)).copy_from(&(p_t - DMatrix::identity(n, n)));
        system.row_mut(n).fill(1.0);
        let mut rhs = DVector::zeros(n + 1);
        rhs[n] = 1.0;
        let normal = system.transpose() * &system;
        let oracle = normal.lu().solve(&(system.transpose() * rhs)).unwrap();
        assert!(max_abs_diff(&d, &oracle) < 1e-10, "{d} vs {oracle}");
    }
}

#[test]
fn on_policy_systems_are_psd_and_consistent() {
    let mut rng = rng(5);
    for _ in 0..30 {
        let n = rng.random_range(3..15);
        let gamma = rng.random_range(0.0..0.99);
        let mdp = random_mdp(&mut rng, n, 2, gamma);
        let pi = random_policy(&mut rng, n, 2);
        let d = rng.random_range(1..=n);
        let rank = rng.random_range(1..=d);
        let x = gaussian_matrix(&mut rng, n, rank) * gaussian_matrix(&mut rng, rank, d);
        let lambda = rng.random_range(0.0..1.0);
        let sys = exact_system(&mdp, &pi, &pi, &x, lambda, Weighting::Stationary).unwrap();
        let sym = (&sys.a_matrix + sys.a_matrix.transpose()) * 0.5;
        let scale = sys.a_matrix.norm().max(1.0);
        assert!(sym.symmetric_eigenvalues().min() >= -1e-10 * scale);
        assert!(sys.consistency_residual() < 1e-8 * scale);
    }
}

#[test]
fn boyan_values_follow_the_recursion() {
    let (mdp, x) = boyan_chain();
    let pi = Policy::uniform(13, 1);
    // v(0) = 0, v(1) = -2, v(s) = -3 + (v(s-1) + v(s-2)) / 2
    let mut v = vec![0.0, -2.0];
    for s in 2..13 {
        v.push(-3.0 + 0.5 * (v[s - 1] + v[s - 2]));
    }
    let oracle = DVector::from_vec(v);
    assert!(max_abs_diff(&boyan_true_values(), &oracle) < 1e-12);
    assert!(max_abs_diff(&exact_values(&mdp, &pi).unwrap(), &oracle) < 1e-10);
    for lambda in [0.0, 0.5, 1.0] {
        let sys = exact_system(&mdp, &pi, &pi, &x, lambda, Weighting::Stationary).unwrap();
        let fitted = &x * sys.td_fixed_point();
        assert!(max_abs_diff(&fitted, &oracle) < 1e-8, "lambda {lambda}: {fitted}");
    }
}

#[test]
fn synthetic_features_have_the_requested_rank() {
    let (mdp, x) = synthetic_lowrank_mdp(60, 50, 5, 9).unwrap();
    let s = x.clone().svd(false, false).singular_values;
    let mut s: Vec<f64> = s.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    assert!(s[5] / s[0] < 1e-8);
    assert!(s[4] / s[0] > 0.5);
    assert_eq!(mdp.n_states(), 60);
    assert!(synthetic_lowrank_mdp(10, 11, 2, 0).is_err());
}

#[test]
fn emphatic_weights_match_sampled_emphasis() {
    let mut rng = rng(6);
    let n = 4;
    let mdp = random_mdp(&mut rng, n, 2, 0.6);
    let behavior = Policy::uniform(n, 2);
    let target = random_policy(&mut rng, n, 2);
    let x = DMatrix::identity(n, n);
    let lambda = 0.3;
    let sys = exact_system(&mdp, &target, &behavior, &x, lambda, Weighting::Emphatic).unwrap();

    let mut sampler = TrajectorySampler::new(&mdp, &behavior, &target, &x, 7).unwrap();
    let steps = 2_000_000;
    let (mut follow_on, mut rho_prev, mut gamma_prev) = (0.0, 0.0, 0.0);
    let mut m = DVector::<f64>::zeros(n);
    for _ in 0..steps {
        let (state, tr) = sampler.step();
        follow_on = rho_prev * gamma_prev * follow_on + 1.0;
        m[state] += lambda + (1.0 - lambda) * follow_on;
        rho_prev = tr.rho;
        gamma_prev = tr.discount_next;
    }
    m /= steps as f64;
    for s in 0..n {
        let rel = (m[s] - sys.state_weights[s]).abs() / sys.state_weights[s];
        assert!(rel < 0.03, "state {s}: sampled {} exact {}", m[s], sys.state_weights[s]);
    }
}
