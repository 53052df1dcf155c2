mod common;

use atdlab::svd::LowRankFactors;
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn identity_gap(m: &DMatrix<f64>) -> f64 {
    let k = m.ncols();
    (m.transpose() * m - DMatrix::identity(k, k)).norm()
}

/// Singular values of `m` in descending order, from the symmetric
/// eigenvalues of `m^T m`.
fn oracle_sigma(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = (m.transpose() * m)
        .symmetric_eigenvalues()
        .iter()
        .map(|x| x.max(0.0).sqrt())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn factors_stay_orthonormal_and_sorted(seed in 0u64..10_000, d in 2usize..16, k in 1usize..8, steps in 1usize..120) {
        let mut rng = rng(seed);
        let mut f = LowRankFactors::new(d, k);
        for t in 0..steps {
            let decay = if t == 0 { 1.0 } else { 0.97 };
            f.update(decay, &gaussian_vector(&mut rng, d), &gaussian_vector(&mut rng, d)).unwrap();
        }
        prop_assert!(f.rank() <= k.min(d));
        prop_assert!(identity_gap(&f.u_matrix()) < 1e-9);
        prop_assert!(identity_gap(&f.v_matrix()) < 1e-9);
        prop_assert!(f.sigma().iter().zip(f.sigma().iter().skip(1)).all(|(a, b)| a >= b));
        prop_assert!(f.sigma().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn untruncated_updates_equal_the_dense_sum(seed in 0u64..10_000, d in 1usize..16, steps in 1usize..60) {
        let mut rng = rng(seed);
        let mut f = LowRankFactors::new(d, d);
        let mut dense = DMatrix::zeros(d, d);
        for _ in 0..steps {
            let a = gaussian_vector(&mut rng, d);
            let b = gaussian_vector(&mut rng, d);
            f.update(0.9, &a, &b).unwrap();
            dense = dense * 0.9 + &a * b.transpose();
        }
        prop_assert!((f.to_dense() - &dense).norm() < 1e-9 * dense.norm().max(1.0));
    }

    #[test]
    fn discarded_mass_is_the_next_singular_value(seed in 0u64..10_000, d in 3usize..12) {
        let mut rng = rng(seed);
        let k = d / 2;
        let m = gaussian_matrix(&mut rng, d, d);
        let mut f = LowRankFactors::from_dense(&m, k);
        let a = gaussian_vector(&mut rng, d);
        let b = gaussian_vector(&mut rng, d);
        // exact pre-truncation matrix: the rank-k state plus the new term
        let before = f.to_dense() + &a * b.transpose();
        let discarded = f.update(1.0, &a, &b).unwrap();
        let sigma = oracle_sigma(&before);
        let tail = sigma[k..].iter().map(|s| s * s).sum::<f64>().sqrt();
        prop_assert!((discarded - tail).abs() < 1e-8 * sigma[0], "{} vs {}", discarded, tail);
        for (got, want) in f.sigma().iter().zip(&sigma) {
            prop_assert!((got - want).abs() < 1e-8 * sigma[0]);
        }
    }

    #[test]
    fn pseudo_inverse_round_trips_on_the_range(seed in 0u64..10_000, d in 2usize..12) {
        let mut rng = rng(seed);
        let rank = d / 2 + 1;
        let m = gaussian_matrix(&mut rng, d, rank) * gaussian_matrix(&mut rng, rank, d);
        let f = LowRankFactors::from_dense(&m, rank);
        let x = &m * gaussian_vector(&mut rng, d);
        let back = &m * f.apply_pinv(&x, 1e-12);
        prop_assert!((back - &x).norm() < 1e-8 * x.norm().max(1.0));
        let direct: DVector<f64> = f.apply(&gaussian_vector(&mut rng, d));
        prop_assert_eq!(direct.len(), d);
    }
}
