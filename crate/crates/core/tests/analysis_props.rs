mod common;

use atdlab::analysis::{
    check_conditions, picard_construct, top_k_selection, truncated_svd, EigenDecomposition,
};
use common::*;
use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn exact_inverse_preconditioner_converges() {
    for seed in 0..10 {
        let (a, _) = on_policy_system(seed, 8, 8, 0.3);
        let b = a.clone().try_inverse().unwrap();
        let report = check_conditions(&a, &b).unwrap();
        assert!(report.converges, "{report:?}");
        assert_eq!(report.rank_ba, 8);
    }
}

#[test]
fn oversized_scalar_step_violates_condition_one() {
    let mut rng = rng(2);
    let a = random_psd(&mut rng, 6, 6) + DMatrix::identity(6, 6) * 0.1;
    let top = a.symmetric_eigenvalues().max();
    let ok = check_conditions(&a, &(DMatrix::identity(6, 6) * (1.0 / top))).unwrap();
    assert!(ok.converges);
    let bad = check_conditions(&a, &(DMatrix::identity(6, 6) * (2.5 / top))).unwrap();
    assert!(!bad.spectral_ok);
    assert!(!bad.converges);
    assert!(bad.max_offending_modulus > 1.0);
}

#[test]
fn picard_right_hand_side_has_the_requested_coefficients() {
    let mut rng = rng(3);
    let d = 6;
    let lambdas: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..1.0)).collect();
    let q = gaussian_matrix(&mut rng, d, d);
    let a = &q * DMatrix::from_diagonal(&DVector::from_column_slice(&lambdas)) * q.clone().try_inverse().unwrap();
    let dec = EigenDecomposition::new(&a).unwrap();
    for p in [1.5, 2.0, 3.0] {
        let b = picard_construct(&dec, p).unwrap();
        let bc = b.map(|x| Complex::new(x, 0.0));
        let coeffs = dec.q_matrix().clone().lu().solve(&bc).unwrap();
        for (j, z) in dec.lambdas().iter().enumerate() {
            let expected = z.re.powf(p);
            assert!((coeffs[j].norm() - expected).abs() < 1e-9 * expected.max(1.0), "p {p} j {j}");
        }
    }
}

#[test]
fn truncated_svd_solution_error_shrinks_with_rank() {
    for seed in 0..5 {
        let (a, b) = on_policy_system(seed, 12, 12, 0.5);
        let w_star = a.clone().lu().solve(&b).unwrap();
        let errors: Vec<f64> = (0..=12).map(|k| (truncated_svd(&a, k).pinv * &b - &w_star).norm()).collect();
        assert!(errors.windows(2).all(|w| w[1] <= w[0] + 1e-10), "{errors:?}");
        assert!(errors[12] < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eigendecomposition_reconstructs(seed in 0u64..10_000, d in 1usize..10) {
        let mut rng = rng(seed);
        let a = gaussian_matrix(&mut rng, d, d);
        let dec = EigenDecomposition::new(&a).unwrap();
        prop_assert!((dec.reconstruct() - &a).norm() < 1e-8 * a.norm().max(1.0));
        // conjugate partners pair up
        for i in 0..d {
            if let Some(j) = dec.partner(i) {
                prop_assert_eq!(dec.partner(j), Some(i));
                prop_assert!((dec.lambdas()[i] - dec.lambdas()[j].conj()).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn top_k_selection_never_splits_pairs(seed in 0u64..10_000, d in 2usize..10, k in 0usize..10) {
        let mut rng = rng(seed);
        let a = gaussian_matrix(&mut rng, d, d);
        let dec = EigenDecomposition::new(&a).unwrap();
        let k = k.min(d);
        let sel = top_k_selection(&dec, k);
        prop_assert!(sel.len() == k || sel.len() == k + 1);
        for &i in &sel {
            if let Some(j) = dec.partner(i) {
                prop_assert!(sel.contains(&j));
            }
        }
    }
}
