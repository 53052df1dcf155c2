use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::{FiniteMdp, MdpError};

const SYNTHETIC_DISCOUNT: f64 = 0.9;

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random ergodic single-action chain whose features have rank `intrinsic_rank`.
///
/// Features are `X = G H` with `G` (n x r) having orthonormal columns and `H`
/// (r x d) having orthonormal rows, so `rank(X) = r` and every nonzero
/// singular value of `X` is one. Transition rows are Dirichlet(1), rewards are
/// standard normal and the discount is a constant 0.9. The target policy is
/// the only policy (one action).
pub fn synthetic_lowrank_mdp(
    n_states: usize,
    d: usize,
    intrinsic_rank: usize,
    seed: u64,
) -> Result<(FiniteMdp, DMatrix<f64>), MdpError> {
    if intrinsic_rank == 0 || intrinsic_rank > d || d > n_states {
        return Err(MdpError::Shape(format!(
            "need 0 < intrinsic_rank <= d <= n_states, got rank {intrinsic_rank}, d {d}, n {n_states}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let transition: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| {
            let raw: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = raw.iter().sum();
            let mut row: Vec<f64> = raw.iter().map(|w| w / total).collect();
            // absorb rounding so the row sums to one within 1e-12
            let drift: f64 = 1.0 - row.iter().sum::<f64>();
            row[0] += drift;
            vec![row]
        })
        .collect();
    let reward: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| vec![(0..n_states).map(|_| StandardNormal.sample(&mut rng)).collect()])
        .collect();

    let g = gaussian_matrix(n_states, intrinsic_rank, &mut rng).qr().q();
    let h = gaussian_matrix(d, intrinsic_rank, &mut rng).qr().q().transpose();
    let features = g * h;

    let mut start = vec![1.0 / n_states as f64; n_states];
    let drift: f64 = 1.0 - start.iter().sum::<f64>();
    start[0] += drift;

    let mdp = FiniteMdp::with_constant_discount(transition, reward, SYNTHETIC_DISCOUNT, start)?;
    Ok((mdp, features))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infeasible_shapes_rejected() {
        assert!(synthetic_lowrank_mdp(10, 12, 3, 0).is_err());
        assert!(synthetic_lowrank_mdp(10, 5, 6, 0).is_err());
        assert!(synthetic_lowrank_mdp(10, 5, 0, 0).is_err());
    }

    #[test]
    fn same_seed_same_problem() {
        let (m1, x1) = synthetic_lowrank_mdp(12, 6, 3, 42).unwrap();
        let (m2, x2) = synthetic_lowrank_mdp(12, 6, 3, 42).unwrap();
        assert_eq!(x1, x2);
        for s in 0..12 {
            assert_eq!(m1.transition_row(s, 0), m2.transition_row(s, 0));
        }
    }
}
