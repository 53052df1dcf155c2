//! Incremental truncated SVD with decayed rank-one updates.
//!
//! The left factor is stored as `U = U_basis * U_rot` (likewise for `V`):
//! new directions are appended to the orthonormal basis, while the small
//! rotation absorbs the core decomposition of each update. The product is
//! only formed when the basis grows to twice the rank or on periodic
//! re-orthonormalization, which keeps a single update at `O(d k + k^3)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, PartialEq)]
pub enum SvdError {
    #[error("update vectors contain non-finite entries")]
    NonFinite,
    #[error("decay {0} outside (0, 1]")]
    Decay(f64),
    #[error("dimension mismatch: factors have dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("snapshot is inconsistent: {0}")]
    Snapshot(String),
}

/// Relative residual below which an update direction is considered already
/// spanned by the current basis.
const NEW_DIRECTION_TOL: f64 = 1e-10;
/// Singular values at or below this fraction of the largest are discarded.
const SIGMA_DROP_TOL: f64 = 1e-14;
const REORTHO_INTERVAL: usize = 50;
const DRIFT_TOL: f64 = 1e-10;

/// Rank-`max_rank` factorization `U diag(sigma) V^T` of a `d x d` matrix.
#[derive(Clone, Debug)]
pub struct LowRankFactors {
    dimension: usize,
    max_rank: usize,
    u_basis: DMatrix<f64>,
    u_rot: DMatrix<f64>,
    v_basis: DMatrix<f64>,
    v_rot: DMatrix<f64>,
    sigma: DVector<f64>,
    updates_since_reortho: usize,
}

struct Projection {
    /// Coordinates in the current left or right singular basis.
    coords: DVector<f64>,
    /// Residual direction in (possibly extended) basis coordinates, unit norm.
    direction: Option<DVector<f64>>,
    residual_norm: f64,
    /// New orthonormal basis column, if the residual leaves the basis span.
    new_column: Option<DVector<f64>>,
}

fn project(basis: &DMatrix<f64>, rot: &DMatrix<f64>, a: &DVector<f64>) -> Projection {
    let scale = a.norm();
    let mut pa = basis.tr_mul(a);
    let mut ra = a - basis * &pa;
    let correction = basis.tr_mul(&ra);
    ra -= basis * &correction;
    pa += correction;

    let coords = rot.tr_mul(&pa);
    let in_basis = &pa - rot * &coords;
    let ra_norm = ra.norm();
    let extend = ra_norm > NEW_DIRECTION_TOL * scale;

    let mut z = if extend {
        let mut z = DVector::zeros(pa.len() + 1);
        z.rows_mut(0, pa.len()).copy_from(&in_basis);
        z[pa.len()] = ra_norm;
        z
    } else {
        in_basis
    };
    let residual_norm = z.norm();
    let direction = if residual_norm > NEW_DIRECTION_TOL * scale {
        z.unscale_mut(residual_norm);
        Some(z)
    } else {
        None
    };
    let new_column = if extend && direction.is_some() {
        Some(ra / ra_norm)
    } else {
        None
    };
    Projection {
        coords,
        direction,
        residual_norm: if residual_norm > NEW_DIRECTION_TOL * scale { residual_norm } else { 0.0 },
        new_column,
    }
}

fn hstack(left: &DMatrix<f64>, col: &DVector<f64>) -> DMatrix<f64> {
    let mut out = left.clone().resize_horizontally(left.ncols() + 1, 0.0);
    out.column_mut(left.ncols()).copy_from(col);
    out
}

/// `[rot 0; 0 0]` grown by one row if the basis was extended, then one
/// column holding `direction` if present.
fn extend_rotation(rot: &DMatrix<f64>, extended: bool, direction: Option<&DVector<f64>>) -> DMatrix<f64> {
    let rows = rot.nrows() + usize::from(extended);
    let cols = rot.ncols() + usize::from(direction.is_some());
    let mut out = DMatrix::zeros(rows, cols);
    out.view_mut((0, 0), rot.shape()).copy_from(rot);
    if let Some(dir) = direction {
        out.column_mut(rot.ncols()).copy_from(dir);
    }
    out
}

impl LowRankFactors {
    /// Empty factors (rank zero) of a `dimension x dimension` matrix.
    pub fn new(dimension: usize, max_rank: usize) -> Self {
        LowRankFactors {
            dimension,
            max_rank,
            u_basis: DMatrix::zeros(dimension, 0),
            u_rot: DMatrix::zeros(0, 0),
            v_basis: DMatrix::zeros(dimension, 0),
            v_rot: DMatrix::zeros(0, 0),
            sigma: DVector::zeros(0),
            updates_since_reortho: 0,
        }
    }

    /// Best rank-`max_rank` approximation of a dense square matrix.
    pub fn from_dense(m: &DMatrix<f64>, max_rank: usize) -> Self {
        assert!(m.is_square(), "factors represent square matrices");
        let svd = linalg::sorted_svd(m);
        let top = svd.sigma.get(0).copied().unwrap_or(0.0);
        let keep = svd
            .sigma
            .iter()
            .take(max_rank)
            .filter(|&&s| s > SIGMA_DROP_TOL * top && s > 0.0)
            .count();
        let mut f = Self::new(m.nrows(), max_rank);
        f.u_basis = svd.u.columns(0, keep).into_owned();
        f.v_basis = svd.v.columns(0, keep).into_owned();
        f.u_rot = DMatrix::identity(keep, keep);
        f.v_rot = DMatrix::identity(keep, keep);
        f.sigma = svd.sigma.rows(0, keep).into_owned();
        f
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn max_rank(&self) -> usize {
        self.max_rank
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn u_matrix(&self) -> DMatrix<f64> {
        &self.u_basis * &self.u_rot
    }

    pub fn v_matrix(&self) -> DMatrix<f64> {
        &self.v_basis * &self.v_rot
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let u = self.u_matrix();
        let v = self.v_matrix();
        let mut us = u;
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * v.transpose()
    }

    /// `U diag(sigma) V^T x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.rank() == 0 {
            return DVector::zeros(self.dimension);
        }
        let coords = self.v_rot.tr_mul(&self.v_basis.tr_mul(x)).component_mul(&self.sigma);
        &self.u_basis * (&self.u_rot * coords)
    }

    /// `V diag(sigma)^+ U^T x`, inverting only `sigma_i > rel_threshold * sigma_1`.
    pub fn apply_pinv(&self, x: &DVector<f64>, rel_threshold: f64) -> DVector<f64> {
        if self.rank() == 0 {
            return DVector::zeros(self.dimension);
        }
        let top = self.sigma[0];
        let mut coords = self.u_rot.tr_mul(&self.u_basis.tr_mul(x));
        for (c, &s) in coords.iter_mut().zip(self.sigma.iter()) {
            *c = if s > rel_threshold * top && s > 0.0 { *c / s } else { 0.0 };
        }
        &self.v_basis * (&self.v_rot * coords)
    }

    /// Replaces the factors of `M` by those of `decay * M + a b^T`, truncated
    /// to `max_rank`. Returns the Frobenius norm of what the truncation
    /// discarded.
    pub fn update(&mut self, decay: f64, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64, SvdError> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(SvdError::Decay(decay));
        }
        for v in [a, b] {
            if v.len() != self.dimension {
                return Err(SvdError::Dimension {
                    expected: self.dimension,
                    got: v.len(),
                });
            }
        }
        if !linalg::all_finite(a) || !linalg::all_finite(b) {
            return Err(SvdError::NonFinite);
        }

        self.sigma.scale_mut(decay);
        let a_norm = a.norm();
        let b_norm = b.norm();
        if a_norm == 0.0 || b_norm == 0.0 {
            return Ok(0.0);
        }
        if self.max_rank == 0 {
            return Ok(a_norm * b_norm);
        }

        let pa = project(&self.u_basis, &self.u_rot, a);
        let pb = project(&self.v_basis, &self.v_rot, b);

        let r = self.rank();
        let ka = r + usize::from(pa.direction.is_some());
        let kb = r + usize::from(pb.direction.is_some());
        let mut core = DMatrix::zeros(ka, kb);
        for i in 0..r {
            core[(i, i)] = self.sigma[i];
        }
        let mut ca = DVector::zeros(ka);
        ca.rows_mut(0, r).copy_from(&pa.coords);
        if ka > r {
            ca[r] = pa.residual_norm;
        }
        let mut cb = DVector::zeros(kb);
        cb.rows_mut(0, r).copy_from(&pb.coords);
        if kb > r {
            cb[r] = pb.residual_norm;
        }
        core += &ca * cb.transpose();

        let svd = linalg::sorted_svd(&core);
        let top = svd.sigma.get(0).copied().unwrap_or(0.0);
        let keep = svd
            .sigma
            .iter()
            .take(self.max_rank)
            .filter(|&&s| s > SIGMA_DROP_TOL * top && s > 0.0)
            .count();
        let discarded = svd.sigma.iter().skip(keep).map(|s| s * s).sum::<f64>().sqrt();

        if let Some(col) = &pa.new_column {
            self.u_basis = hstack(&self.u_basis, col);
        }
        if let Some(col) = &pb.new_column {
            self.v_basis = hstack(&self.v_basis, col);
        }
        let u_ext = extend_rotation(&self.u_rot, pa.new_column.is_some(), pa.direction.as_ref());
        let v_ext = extend_rotation(&self.v_rot, pb.new_column.is_some(), pb.direction.as_ref());
        self.u_rot = u_ext * svd.u.columns(0, keep);
        self.v_rot = v_ext * svd.v.columns(0, keep);
        self.sigma = svd.sigma.rows(0, keep).into_owned();

        self.updates_since_reortho += 1;
        if self.updates_since_reortho >= REORTHO_INTERVAL {
            self.reorthonormalize();
        } else if self.u_basis.ncols() >= 2 * self.max_rank.max(1) || self.v_basis.ncols() >= 2 * self.max_rank.max(1) {
            self.collapse();
            if self.orthonormality_drift() > DRIFT_TOL {
                self.reorthonormalize();
            }
        }
        Ok(discarded)
    }

    /// `max(||U^T U - I||_max, ||V^T V - I||_max)`.
    pub fn orthonormality_drift(&self) -> f64 {
        linalg::orthonormality_error(&self.u_matrix()).max(linalg::orthonormality_error(&self.v_matrix()))
    }

    fn collapse(&mut self) {
        self.u_basis = self.u_matrix();
        self.v_basis = self.v_matrix();
        let r = self.rank();
        self.u_rot = DMatrix::identity(r, r);
        self.v_rot = DMatrix::identity(r, r);
    }

    /// Modified Gram-Schmidt on both factors followed by a core SVD that
    /// restores the diagonal form.
    pub fn reorthonormalize(&mut self) {
        self.updates_since_reortho = 0;
        let r = self.rank();
        if r == 0 {
            self.collapse();
            return;
        }
        let (qu, ru) = linalg::mgs_qr(&self.u_matrix());
        let (qv, rv) = linalg::mgs_qr(&self.v_matrix());
        let core = ru * DMatrix::from_diagonal(&self.sigma) * rv.transpose();
        let svd = linalg::sorted_svd(&core);
        let top = svd.sigma.get(0).copied().unwrap_or(0.0);
        let keep = svd.sigma.iter().filter(|&&s| s > SIGMA_DROP_TOL * top && s > 0.0).count();
        self.u_basis = qu * svd.u.columns(0, keep);
        self.v_basis = qv * svd.v.columns(0, keep);
        self.u_rot = DMatrix::identity(keep, keep);
        self.v_rot = DMatrix::identity(keep, keep);
        self.sigma = svd.sigma.rows(0, keep).into_owned();
    }

    pub fn snapshot(&self) -> FactorSnapshot {
        FactorSnapshot {
            dimension: self.dimension,
            max_rank: self.max_rank,
            sigma: self.sigma.iter().copied().collect(),
            u_columns: columns(&self.u_matrix()),
            v_columns: columns(&self.v_matrix()),
        }
    }

    pub fn from_snapshot(s: &FactorSnapshot) -> Result<Self, SvdError> {
        let r = s.sigma.len();
        if s.u_columns.len() != r || s.v_columns.len() != r || r > s.max_rank {
            return Err(SvdError::Snapshot(format!("{r} singular values with max rank {}", s.max_rank)));
        }
        if s.u_columns.iter().chain(&s.v_columns).any(|c| c.len() != s.dimension) {
            return Err(SvdError::Snapshot(format!("factor columns must have length {}", s.dimension)));
        }
        let mut f = Self::new(s.dimension, s.max_rank);
        f.u_basis = DMatrix::from_fn(s.dimension, r, |i, j| s.u_columns[j][i]);
        f.v_basis = DMatrix::from_fn(s.dimension, r, |i, j| s.v_columns[j][i]);
        f.u_rot = DMatrix::identity(r, r);
        f.v_rot = DMatrix::identity(r, r);
        f.sigma = DVector::from_vec(s.sigma.clone());
        Ok(f)
    }
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// Serializable form of [`LowRankFactors`] for checkpointing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSnapshot {
    pub dimension: usize,
    pub max_rank: usize,
    pub sigma: Vec<f64>,
    pub u_columns: Vec<Vec<f64>>,
    pub v_columns: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn first_update_is_outer_product() {
        let mut f = LowRankFactors::new(3, 2);
        let u = DVector::from_vec(vec![3.0, 0.0, 4.0]);
        let v = DVector::from_vec(vec![0.0, 2.0, 0.0]);
        let err = f.update(1.0, &u, &v).unwrap();
        assert_eq!(err, 0.0);
        assert_eq!(f.rank(), 1);
        assert!((f.sigma()[0] - 10.0).abs() < 1e-14);
        let uu = f.u_matrix();
        let vv = f.v_matrix();
        let sign = uu[(0, 0)].signum();
        assert!((uu.column(0) * sign - &u / 5.0).norm() < 1e-14);
        assert!((vv.column(0) * sign - &v / 2.0).norm() < 1e-14);
    }

    #[test]
    fn zero_update_only_decays() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = LowRankFactors::new(4, 3);
        for _ in 0..3 {
            f.update(1.0, &random_vec(&mut rng, 4), &random_vec(&mut rng, 4)).unwrap();
        }
        let (u, s, v) = (f.u_matrix(), f.sigma().clone(), f.v_matrix());
        f.update(0.5, &DVector::zeros(4), &DVector::zeros(4)).unwrap();
        assert_eq!(f.u_matrix(), u);
        assert_eq!(f.v_matrix(), v);
        assert!((f.sigma() - s * 0.5).norm() < 1e-15);
    }

    #[test]
    fn empty_factors_pinv_is_zero() {
        let f = LowRankFactors::new(5, 3);
        let x = DVector::from_element(5, 1.0);
        assert_eq!(f.apply_pinv(&x, 1e-6), DVector::zeros(5));
        assert_eq!(f.apply(&x), DVector::zeros(5));
    }

    #[test]
    fn identity_pinv_returns_input() {
        let f = LowRankFactors::from_dense(&DMatrix::identity(6, 6), 6);
        let x = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        assert!((f.apply_pinv(&x, 1e-6) - &x).norm() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        let mut f = LowRankFactors::new(2, 2);
        let ok = DVector::from_element(2, 1.0);
        let bad = DVector::from_vec(vec![f64::NAN, 1.0]);
        assert_eq!(f.update(1.0, &bad, &ok), Err(SvdError::NonFinite));
        assert_eq!(f.update(0.0, &ok, &ok), Err(SvdError::Decay(0.0)));
        assert!(matches!(f.update(1.0, &DVector::zeros(3), &ok), Err(SvdError::Dimension { .. })));
    }

    #[test]
    fn running_average_matches_dense() {
        let d = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut f = LowRankFactors::new(d, d);
        let mut dense = DMatrix::zeros(d, d);
        for t in 0..200 {
            let beta = 1.0 / (t as f64 + 1.0);
            let a = random_vec(&mut rng, d);
            let b = random_vec(&mut rng, d);
            dense = dense * (1.0 - beta) + &a * b.transpose() * beta;
            let decay = if t == 0 { 1.0 } else { 1.0 - beta };
            f.update(decay, &(a * beta.sqrt()), &(b * beta.sqrt())).unwrap();
        }
        assert!((f.to_dense() - dense).norm() < 1e-8);
        assert!(f.orthonormality_drift() < 1e-8);
    }

    #[test]
    fn truncation_error_matches_discarded_mass() {
        let d = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut f = LowRankFactors::new(d, 3);
        for _ in 0..30 {
            let before = f.to_dense();
            let a = random_vec(&mut rng, d);
            let b = random_vec(&mut rng, d);
            let target = &before * 0.9 + &a * b.transpose();
            let err = f.update(0.9, &a, &b).unwrap();
            assert!(((target - f.to_dense()).norm() - err).abs() < 1e-10);
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut f = LowRankFactors::new(5, 3);
        for _ in 0..4 {
            f.update(1.0, &random_vec(&mut rng, 5), &random_vec(&mut rng, 5)).unwrap();
        }
        let json = serde_json::to_string(&f.snapshot()).unwrap();
        let back = LowRankFactors::from_snapshot(&serde_json::from_str(&json).unwrap()).unwrap();
        assert!((back.to_dense() - f.to_dense()).norm() < 1e-14);
    }
}
