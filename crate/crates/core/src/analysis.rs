//! Exact expected-update analysis: eigen-decompositions, rank-k
//! approximations, stationary-iteration convergence conditions, rate bounds
//! and discrete-Picard constructions.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

type C64 = Complex<f64>;

const MAX_DIM: usize = 200;
/// Relative tolerance for calling an eigenvalue real.
const REAL_TOL: f64 = 1e-12;
/// Relative distance under which eigenvalues are treated as one repeated value.
const CLUSTER_TOL: f64 = 1e-9;
const RECONSTRUCTION_TOL: f64 = 1e-8;
pub const RANK_TOL: f64 = 1e-10;
pub const EIGEN_TOL: f64 = 1e-10;
pub const NULLSPACE_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("matrix is not diagonalizable (reconstruction residual {0:e})")]
    NotDiagonalizable(f64),
    #[error("selection splits the complex-conjugate pair at index {0}")]
    SplitConjugatePair(usize),
    #[error("selection index {index} out of range for dimension {dimension}")]
    IndexOutOfRange { index: usize, dimension: usize },
    #[error("operation needs real eigenvalues")]
    ComplexEigenvalues,
    #[error("eigenvalue {index} is negative ({value:e})")]
    NegativeEigenvalue { index: usize, value: f64 },
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("shape error: {0}")]
    Shape(String),
}

fn check_square(a: &DMatrix<f64>) -> Result<(), AnalysisError> {
    if !a.is_square() {
        return Err(AnalysisError::Shape(format!("expected a square matrix, got {:?}", a.shape())));
    }
    if a.nrows() > MAX_DIM {
        return Err(AnalysisError::Shape(format!(
            "dimension {} exceeds the analysis limit {MAX_DIM}",
            a.nrows()
        )));
    }
    Ok(())
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

/// `A = Q diag(lambdas) Q^{-1}` with unit-norm columns in `Q`.
///
/// Eigenvalues are sorted by real part (descending), then imaginary part
/// (descending), so each complex-conjugate pair sits at adjacent indices.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    q: DMatrix<C64>,
    q_inv: DMatrix<C64>,
    lambdas: Vec<C64>,
    /// Index of the conjugate partner of each non-real eigenvalue.
    partner: Vec<Option<usize>>,
}

fn pair_partners(lambdas: &[C64]) -> Vec<Option<usize>> {
    let mut partner = vec![None; lambdas.len()];
    for i in 0..lambdas.len() {
        if lambdas[i].im > 0.0 && partner[i].is_none() {
            if let Some(j) = (0..lambdas.len()).find(|&j| partner[j].is_none() && j != i && lambdas[j] == lambdas[i].conj()) {
                partner[i] = Some(j);
                partner[j] = Some(i);
            }
        }
    }
    partner
}

/// Eigenvectors for the eigenvalue `mu` of multiplicity `m`: the `m` right
/// singular vectors of `A - mu I` with the smallest singular values.
fn eigenvectors(a: &DMatrix<C64>, mu: C64, m: usize) -> DMatrix<C64> {
    let n = a.nrows();
    let shifted = a - DMatrix::<C64>::identity(n, n) * mu;
    let svd = linalg::svd(&shifted, false, true);
    let v = svd.v_t.expect("v_t requested").adjoint();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    DMatrix::from_fn(n, m, |r, c| v[(r, order[c])])
}

fn normalize_column(col: &mut nalgebra::DVectorViewMut<'_, C64>) {
    let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let pivot = col
        .iter()
        .copied()
        .max_by(|x, y| x.norm().total_cmp(&y.norm()))
        .unwrap_or(C64::new(1.0, 0.0));
    // Unit norm, with the largest entry real and positive.
    let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { C64::new(1.0, 0.0) };
    for z in col.iter_mut() {
        *z = *z * phase / norm;
    }
}

impl EigenDecomposition {
    pub fn new(a: &DMatrix<f64>) -> Result<Self, AnalysisError> {
        check_square(a)?;
        let n = a.nrows();
        let scale = a.norm().max(f64::MIN_POSITIVE);
        let mut raw: Vec<C64> = a.complex_eigenvalues().iter().copied().collect();
        for z in raw.iter_mut() {
            if z.im.abs() <= REAL_TOL * scale {
                z.im = 0.0;
            }
        }

        // Group numerically repeated eigenvalues.
        let mut clusters: Vec<(C64, usize)> = Vec::new();
        let mut assigned = vec![false; n];
        for i in 0..n {
            if assigned[i] {
                continue;
            }
            let members: Vec<usize> = (i..n)
                .filter(|&j| !assigned[j] && (raw[j] - raw[i]).norm() <= CLUSTER_TOL * scale)
                .collect();
            let mean = members.iter().map(|&j| raw[j]).sum::<C64>() / members.len() as f64;
            for &j in &members {
                assigned[j] = true;
            }
            clusters.push((mean, members.len()));
        }
        // Make conjugate clusters exact mirrors of each other.
        let mut used = vec![false; clusters.len()];
        for i in 0..clusters.len() {
            if clusters[i].0.im > 0.0 && !used[i] {
                let target = clusters[i].0.conj();
                if let Some(j) = (0..clusters.len())
                    .filter(|&j| !used[j] && clusters[j].0.im < 0.0 && clusters[j].1 == clusters[i].1)
                    .min_by(|&x, &y| (clusters[x].0 - target).norm().total_cmp(&(clusters[y].0 - target).norm()))
                {
                    clusters[j].0 = target;
                    used[i] = true;
                    used[j] = true;
                }
            }
        }
        clusters.sort_by(|x, y| y.0.re.total_cmp(&x.0.re).then(y.0.im.total_cmp(&x.0.im)));

        let ac = to_complex(a);
        let mut q = DMatrix::<C64>::zeros(n, n);
        let mut lambdas = Vec::with_capacity(n);
        let mut computed: Vec<(C64, DMatrix<C64>)> = Vec::new();
        for &(mu, m) in &clusters {
            let vecs = if mu.im < 0.0 {
                match computed.iter().find(|(nu, v)| *nu == mu.conj() && v.ncols() == m) {
                    Some((_, v)) => v.map(|z| z.conj()),
                    None => eigenvectors(&ac, mu, m),
                }
            } else if mu.im == 0.0 {
                let real = linalg::sorted_svd(&(a - DMatrix::<f64>::identity(n, n) * mu.re));
                let cols = real.v.ncols();
                to_complex(&real.v.columns(cols - m, m).into_owned())
            } else {
                eigenvectors(&ac, mu, m)
            };
            let start = lambdas.len();
            q.view_mut((0, start), (n, m)).copy_from(&vecs);
            lambdas.extend(std::iter::repeat_n(mu, m));
            computed.push((mu, vecs));
        }
        for mut col in q.column_iter_mut() {
            normalize_column(&mut col);
        }
        let q_inv = q
            .clone()
            .try_inverse()
            .ok_or(AnalysisError::NotDiagonalizable(f64::INFINITY))?;
        let dec = EigenDecomposition {
            partner: pair_partners(&lambdas),
            q,
            q_inv,
            lambdas,
        };
        let residual = (a - dec.reconstruct()).norm();
        if !(residual <= RECONSTRUCTION_TOL * scale) && residual > 0.0 {
            return Err(AnalysisError::NotDiagonalizable(residual / scale));
        }
        Ok(dec)
    }

    /// Decomposition with prescribed real eigenvectors (columns of `q`, which
    /// get normalized) and eigenvalues (sorted internally).
    pub fn from_real_parts(q: &DMatrix<f64>, lambdas: &[f64]) -> Result<Self, AnalysisError> {
        check_square(q)?;
        if lambdas.len() != q.ncols() {
            return Err(AnalysisError::Shape(format!("{} eigenvalues for {} columns", lambdas.len(), q.ncols())));
        }
        let mut order: Vec<usize> = (0..lambdas.len()).collect();
        order.sort_by(|&i, &j| lambdas[j].total_cmp(&lambdas[i]));
        let mut qc = DMatrix::from_fn(q.nrows(), q.ncols(), |r, c| C64::new(q[(r, order[c])], 0.0));
        for mut col in qc.column_iter_mut() {
            normalize_column(&mut col);
        }
        let q_inv = qc
            .clone()
            .try_inverse()
            .ok_or(AnalysisError::NotDiagonalizable(f64::INFINITY))?;
        let lambdas: Vec<C64> = order.iter().map(|&i| C64::new(lambdas[i], 0.0)).collect();
        Ok(EigenDecomposition {
            partner: vec![None; lambdas.len()],
            q: qc,
            q_inv,
            lambdas,
        })
    }

    pub fn dimension(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[C64] {
        &self.lambdas
    }

    pub fn q_matrix(&self) -> &DMatrix<C64> {
        &self.q
    }

    pub fn q_inverse(&self) -> &DMatrix<C64> {
        &self.q_inv
    }

    pub fn is_real(&self) -> bool {
        self.lambdas.iter().all(|z| z.im == 0.0)
    }

    pub fn real_lambdas(&self) -> Option<Vec<f64>> {
        self.is_real().then(|| self.lambdas.iter().map(|z| z.re).collect())
    }

    /// Index of the conjugate partner of eigenvalue `i`, if it is not real.
    pub fn partner(&self, i: usize) -> Option<usize> {
        self.partner[i]
    }

    /// Spectral 2-norm of `Q`.
    pub fn q_norm(&self) -> f64 {
        linalg::singular_values(&self.q).max()
    }

    fn spectral(&self, diag: impl Fn(usize, C64) -> C64) -> DMatrix<f64> {
        let d = DVector::from_iterator(self.dimension(), self.lambdas.iter().enumerate().map(|(i, &z)| diag(i, z)));
        let m = &self.q * DMatrix::from_diagonal(&d) * &self.q_inv;
        m.map(|z| z.re)
    }

    /// `Q diag(lambdas) Q^{-1}` (real part).
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.spectral(|_, z| z)
    }

    /// Coordinates `Q^{-1} v`.
    pub fn coordinates(&self, v: &DVector<f64>) -> DVector<C64> {
        &self.q_inv * to_complex(&DMatrix::from_column_slice(v.len(), 1, v.as_slice())).column(0)
    }
}

/// A low-rank approximation together with the inverse used to precondition.
#[derive(Clone, Debug)]
pub struct Approximation {
    pub matrix: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
}

fn validate_selection(dec: &EigenDecomposition, selection: &[usize]) -> Result<Vec<bool>, AnalysisError> {
    let d = dec.dimension();
    let mut mask = vec![false; d];
    for &i in selection {
        if i >= d {
            return Err(AnalysisError::IndexOutOfRange { index: i, dimension: d });
        }
        mask[i] = true;
    }
    for i in 0..d {
        if let Some(j) = dec.partner(i) {
            if mask[i] != mask[j] {
                return Err(AnalysisError::SplitConjugatePair(i.min(j)));
            }
        }
    }
    Ok(mask)
}

/// `Q Lambda_S Q^{-1}` keeping only the eigenvalues at `selection` (0-based
/// indices into the sorted eigenvalues), with its spectral inverse
/// `Q Lambda_S^+ Q^{-1}`. Eigenvalues below `RANK_TOL` times the largest
/// modulus count as zero.
pub fn rank_k_eigen_approx(dec: &EigenDecomposition, selection: &[usize]) -> Result<Approximation, AnalysisError> {
    let mask = validate_selection(dec, selection)?;
    let zero = C64::new(0.0, 0.0);
    let scale = dec.lambdas.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let matrix = dec.spectral(|i, z| if mask[i] { z } else { zero });
    let pinv = dec.spectral(|i, z| if mask[i] && z.norm() > RANK_TOL * scale { z.inv() } else { zero });
    Ok(Approximation { matrix, pinv })
}

/// Indices of the `k` leading eigenvalues, grown by one when the cut would
/// split a conjugate pair.
pub fn top_k_selection(dec: &EigenDecomposition, k: usize) -> Vec<usize> {
    let k = k.min(dec.dimension());
    let mut sel: Vec<usize> = (0..k).collect();
    if k > 0 {
        if let Some(j) = dec.partner(k - 1) {
            if j >= k {
                sel.push(j);
            }
        }
    }
    sel
}

/// Best rank-`k` approximation in the SVD sense with its Moore-Penrose
/// pseudo-inverse (the preconditioner maintained by the sampled learners).
pub fn truncated_svd(a: &DMatrix<f64>, k: usize) -> Approximation {
    let svd = linalg::sorted_svd(a);
    let top = svd.sigma.get(0).copied().unwrap_or(0.0);
    let mut matrix = DMatrix::zeros(a.nrows(), a.ncols());
    let mut pinv = DMatrix::zeros(a.ncols(), a.nrows());
    for i in 0..k.min(svd.sigma.len()) {
        let s = svd.sigma[i];
        matrix += svd.u.column(i) * svd.v.column(i).transpose() * s;
        if s > RANK_TOL * top && s > 0.0 {
            pinv += svd.v.column(i) * svd.u.column(i).transpose() / s;
        }
    }
    Approximation { matrix, pinv }
}

/// Errors of the deterministic iteration `w <- w + (alpha A_hat^+ + eta I)(b - A w)`.
#[derive(Clone, Debug)]
pub struct IterationTrace {
    /// `errors[t] = ||w_t - A^+ b||`, starting with `w_0`.
    pub errors: Vec<f64>,
    pub final_w: DVector<f64>,
    /// First step at which the error dropped below the stopping tolerance.
    pub stopped_at: Option<usize>,
}

impl IterationTrace {
    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("at least the initial error is recorded")
    }
}

/// Runs `steps` expected updates from `w0`. When `stop_below` is set the
/// iteration ends as soon as the error falls below it.
#[allow(clippy::too_many_arguments)]
pub fn expected_iteration(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    a_hat_pinv: &DMatrix<f64>,
    alpha: f64,
    eta: f64,
    w0: &DVector<f64>,
    steps: usize,
    stop_below: Option<f64>,
) -> Result<IterationTrace, AnalysisError> {
    check_square(a)?;
    let d = a.nrows();
    if b.len() != d || w0.len() != d || a_hat_pinv.shape() != (d, d) {
        return Err(AnalysisError::Shape("system, preconditioner and start must share dimension".into()));
    }
    let w_star = linalg::pseudo_inverse(a, RANK_TOL) * b;
    let precond = a_hat_pinv * alpha + DMatrix::<f64>::identity(d, d) * eta;
    let mut w = w0.clone();
    let mut errors = Vec::with_capacity(steps.min(1 << 20) + 1);
    errors.push((&w - &w_star).norm());
    let mut stopped_at = stop_below.filter(|&tol| errors[0] < tol).map(|_| 0);
    if stopped_at.is_none() {
        for t in 1..=steps {
            let residual = b - a * &w;
            w += &precond * residual;
            let err = (&w - &w_star).norm();
            errors.push(err);
            if !err.is_finite() {
                break;
            }
            if stop_below.is_some_and(|tol| err < tol) {
                stopped_at = Some(t);
                break;
            }
        }
    }
    Ok(IterationTrace {
        errors,
        final_w: w,
        stopped_at,
    })
}

/// Verdict on the three convergence conditions for `w <- (I - BA) w + B b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub spectral_ok: bool,
    /// Largest modulus among eigenvalues of `I - BA` that are not 1.
    pub max_offending_modulus: f64,
    pub rank_ok: bool,
    pub rank_ba: usize,
    pub rank_ba_squared: usize,
    pub nullspace_ok: bool,
    /// Sine of the largest principal angle between the null spaces of `BA`
    /// and `A` (1 when their dimensions differ).
    pub nullspace_residual: f64,
    pub converges: bool,
}

fn subspace_distance(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    if x.ncols() != y.ncols() {
        return 1.0;
    }
    if x.ncols() == 0 {
        return 0.0;
    }
    let residual = x - y * (y.transpose() * x);
    linalg::singular_values(&residual).max()
}

pub fn check_conditions(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<ConditionReport, AnalysisError> {
    check_square(a)?;
    if b.shape() != a.shape() {
        return Err(AnalysisError::Shape("A and B must have the same shape".into()));
    }
    let d = a.nrows();
    let ba = b * a;
    let iteration = DMatrix::<f64>::identity(d, d) - &ba;
    let mut max_offending_modulus = 0.0_f64;
    let mut spectral_ok = true;
    for mu in iteration.complex_eigenvalues().iter() {
        if (mu - C64::new(1.0, 0.0)).norm() <= EIGEN_TOL {
            continue;
        }
        let modulus = mu.norm();
        max_offending_modulus = max_offending_modulus.max(modulus);
        if !(modulus < 1.0 - EIGEN_TOL) {
            spectral_ok = false;
        }
    }

    let rank_ba = linalg::numerical_rank(&ba, RANK_TOL);
    let rank_ba_squared = linalg::numerical_rank(&(&ba * &ba), RANK_TOL);
    let rank_ok = rank_ba == rank_ba_squared;

    let nullspace_residual = subspace_distance(&linalg::null_space(&ba, RANK_TOL), &linalg::null_space(a, RANK_TOL));
    let nullspace_ok = nullspace_residual <= NULLSPACE_TOL;

    Ok(ConditionReport {
        spectral_ok,
        max_offending_modulus,
        rank_ok,
        rank_ba,
        rank_ba_squared,
        nullspace_ok,
        nullspace_residual,
        converges: spectral_ok && rank_ok && nullspace_ok,
    })
}

/// `B = alpha A_hat^+ + eta I`.
pub fn preconditioner(approx: &Approximation, alpha: f64, eta: f64) -> DMatrix<f64> {
    let d = approx.pinv.nrows();
    &approx.pinv * alpha + DMatrix::<f64>::identity(d, d) * eta
}

/// Supremum of the `eta > 0` for which every eigenvalue of `I - BA` with
/// `B = alpha A_hat^+ + eta I` (spectral inverse on `selection`) is 1 or lies
/// strictly inside the unit disc. Returns 0 when no positive `eta` works.
pub fn valid_eta_bound(dec: &EigenDecomposition, selection: &[usize], alpha: f64) -> Result<f64, AnalysisError> {
    let mask = validate_selection(dec, selection)?;
    let scale = dec.lambdas.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut bound = f64::INFINITY;
    for (i, z) in dec.lambdas.iter().enumerate() {
        let mod2 = z.norm_sqr();
        if z.norm() <= RANK_TOL * scale {
            continue;
        }
        let c = if mask[i] { 1.0 - alpha } else { 1.0 };
        if c.abs() >= 1.0 && mask[i] {
            return Ok(0.0);
        }
        let disc = c * c * z.re * z.re - mod2 * (c * c - 1.0);
        let sup = if disc < 0.0 { 0.0 } else { ((c * z.re + disc.sqrt()) / mod2).max(0.0) };
        bound = bound.min(sup);
    }
    Ok(bound)
}

/// The step-size ceiling `max(2 - alpha, alpha) / max_j |lambda_j|`.
pub fn modulus_eta_bound(dec: &EigenDecomposition, alpha: f64) -> f64 {
    let top = dec.lambdas.iter().map(|z| z.norm()).fold(0.0, f64::max);
    (2.0 - alpha).max(alpha) / top
}

/// Condition report for an arbitrary eigenvalue selection, plus the
/// negative-eigenvalue requirements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub conditions: ConditionReport,
    /// Every eigenvalue with negative real part is selected.
    pub covers_negative: bool,
    /// `eta < alpha / |lambda|` for each selected negative eigenvalue.
    pub eta_ok: bool,
}

pub fn selection_check(
    dec: &EigenDecomposition,
    selection: &[usize],
    alpha: f64,
    eta: f64,
) -> Result<SelectionReport, AnalysisError> {
    let approx = rank_k_eigen_approx(dec, selection)?;
    let mask = validate_selection(dec, selection)?;
    let a = dec.reconstruct();
    let conditions = check_conditions(&a, &preconditioner(&approx, alpha, eta))?;
    let scale = dec.lambdas.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let negative = |z: &C64| z.re < -RANK_TOL * scale;
    let covers_negative = dec.lambdas.iter().zip(&mask).all(|(z, &sel)| !negative(z) || sel);
    let eta_ok = dec
        .lambdas
        .iter()
        .zip(&mask)
        .filter(|(z, &sel)| sel && negative(z))
        .all(|(z, _)| eta < alpha / z.norm());
    Ok(SelectionReport {
        conditions,
        covers_negative,
        eta_ok,
    })
}

fn nonnegative_real(dec: &EigenDecomposition) -> Result<Vec<f64>, AnalysisError> {
    let lambdas = dec.real_lambdas().ok_or(AnalysisError::ComplexEigenvalues)?;
    let scale = lambdas.iter().map(|x| x.abs()).fold(0.0, f64::max);
    for (index, &value) in lambdas.iter().enumerate() {
        if value < -RANK_TOL * scale {
            return Err(AnalysisError::NegativeEigenvalue { index, value });
        }
    }
    Ok(lambdas)
}

/// Per-eigenvalue terms of the rate bound: `|1 - alpha - eta lambda_j|^t lambda_j^(p-1)`
/// for the leading `k`, `|1 - eta lambda_j|^t lambda_j^(p-1)` for the rest of
/// the nonzero eigenvalues.
pub fn rate_bound_terms(dec: &EigenDecomposition, k: usize, alpha: f64, eta: f64, p: f64, t: u32) -> Result<Vec<f64>, AnalysisError> {
    let lambdas = nonnegative_real(dec)?;
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(AnalysisError::Assumption(format!("alpha = {alpha} must lie in (0, 2)")));
    }
    let ceiling = modulus_eta_bound(dec, alpha);
    if !(eta > 0.0 && eta <= ceiling) {
        return Err(AnalysisError::Assumption(format!(
            "eta = {eta} must satisfy 0 < eta <= max(2 - alpha, alpha) / lambda_1 = {ceiling}"
        )));
    }
    if p <= 1.0 {
        return Err(AnalysisError::Assumption(format!("Picard exponent p = {p} must exceed 1")));
    }
    let scale = lambdas.first().copied().unwrap_or(0.0);
    Ok(lambdas
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > RANK_TOL * scale)
        .map(|(j, &l)| {
            let factor = if j < k { 1.0 - alpha - eta * l } else { 1.0 - eta * l };
            factor.abs().powi(t as i32) * l.powf(p - 1.0)
        })
        .collect())
}

/// Convergence-rate bound for the leading-`k` approximation on a system that
/// satisfies the discrete Picard condition with exponent `p`, at step `t`.
pub fn rate_bound(dec: &EigenDecomposition, k: usize, alpha: f64, eta: f64, p: f64, t: u32) -> Result<f64, AnalysisError> {
    Ok(rate_bound_terms(dec, k, alpha, eta, p, t)?.into_iter().fold(0.0, f64::max))
}

/// `b = Q c` with `c_j = lambda_j^p`, saturating `|(Q^{-1} b)_j| <= lambda_j^p`.
pub fn picard_construct(dec: &EigenDecomposition, p: f64) -> Result<DVector<f64>, AnalysisError> {
    let lambdas = nonnegative_real(dec)?;
    let c = DVector::from_iterator(
        lambdas.len(),
        lambdas.iter().map(|&l| C64::new(if l > 0.0 { l.powf(p) } else { 0.0 }, 0.0)),
    );
    Ok((&dec.q * c).map(|z| z.re))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(d: usize, rank: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(d, rank, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose()
    }

    #[test]
    fn decomposes_symmetric_matrix() {
        let a = random_psd(6, 6, 1);
        let dec = EigenDecomposition::new(&a).unwrap();
        assert!(dec.is_real());
        assert!((dec.reconstruct() - &a).norm() < 1e-10 * a.norm());
        let l = dec.real_lambdas().unwrap();
        assert!(l.windows(2).all(|w| w[0] >= w[1]));
        for c in dec.q_matrix().column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposes_rotation_with_complex_pair() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, -2.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let dec = EigenDecomposition::new(&a).unwrap();
        assert!(!dec.is_real());
        assert_eq!(dec.partner(1), Some(2));
        assert!((dec.reconstruct() - &a).norm() < 1e-12);
        assert!(matches!(rank_k_eigen_approx(&dec, &[0, 1]), Err(AnalysisError::SplitConjugatePair(1))));
        assert_eq!(top_k_selection(&dec, 2), vec![0, 1, 2]);
        let full = rank_k_eigen_approx(&dec, &[0, 1, 2]).unwrap();
        assert!((full.matrix - &a).norm() < 1e-12);
    }

    #[test]
    fn repeated_eigenvalues() {
        let a = random_psd(5, 2, 3);
        let dec = EigenDecomposition::new(&a).unwrap();
        let l = dec.real_lambdas().unwrap();
        assert!(l[2..].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn defective_matrix_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(EigenDecomposition::new(&a), Err(AnalysisError::NotDiagonalizable(_))));
    }

    #[test]
    fn selections() {
        let a = random_psd(6, 6, 4);
        let dec = EigenDecomposition::new(&a).unwrap();
        let all: Vec<usize> = (0..6).collect();
        assert!((rank_k_eigen_approx(&dec, &all).unwrap().matrix - &a).norm() < 1e-8);
        assert_eq!(rank_k_eigen_approx(&dec, &[]).unwrap().matrix, DMatrix::zeros(6, 6));
        let top3 = rank_k_eigen_approx(&dec, &[0, 1, 2]).unwrap();
        let l = dec.real_lambdas().unwrap();
        let err = linalg::singular_values(&(&a - top3.matrix)).max();
        assert!((err - l[3]).abs() < 1e-10);
    }

    #[test]
    fn newton_step_is_exact() {
        let a = random_psd(5, 5, 8);
        let b = DVector::from_fn(5, |i, _| i as f64 + 1.0);
        let dec = EigenDecomposition::new(&a).unwrap();
        let approx = rank_k_eigen_approx(&dec, &[0, 1, 2, 3, 4]).unwrap();
        let trace = expected_iteration(&a, &b, &approx.pinv, 1.0, 0.0, &DVector::zeros(5), 1, None).unwrap();
        assert!(trace.final_error() < 1e-12 * (1.0 + trace.errors[0]));
    }

    #[test]
    fn richardson_when_k_is_zero() {
        let a = random_psd(4, 4, 2);
        let dec = EigenDecomposition::new(&a).unwrap();
        let l1 = dec.real_lambdas().unwrap()[0];
        let b = &a * DVector::from_element(4, 1.0);
        let zero = DMatrix::zeros(4, 4);
        let ok = check_conditions(&a, &(DMatrix::identity(4, 4) * (1.0 / l1))).unwrap();
        assert!(ok.converges);
        let bad = check_conditions(&a, &(DMatrix::identity(4, 4) * (2.5 / l1))).unwrap();
        assert!(!bad.spectral_ok);
        assert!(bad.max_offending_modulus > 1.0);
        let trace = expected_iteration(&a, &b, &zero, 1.0, 2.5 / l1, &DVector::zeros(4), 200, None).unwrap();
        assert!(trace.final_error() > trace.errors[0]);
    }

    #[test]
    fn inverse_preconditioner_converges() {
        let a = random_psd(5, 5, 6) + DMatrix::from_fn(5, 5, |i, j| if i < j { 0.1 } else { 0.0 });
        let inv = a.clone().try_inverse().unwrap();
        assert!(check_conditions(&a, &inv).unwrap().converges);
    }

    #[test]
    fn eta_bound_matches_condition_one() {
        // Positive definite symmetric part plus a skew part: complex eigenvalues
        // with positive real parts.
        let skew = DMatrix::from_fn(5, 5, |i, j| if i < j { 1.0 } else if i > j { -1.0 } else { 0.0 });
        let a = random_psd(5, 5, 11) + skew;
        let dec = EigenDecomposition::new(&a).unwrap();
        assert!(!dec.is_real());
        for k in 0..=5 {
            let sel = top_k_selection(&dec, k);
            let approx = rank_k_eigen_approx(&dec, &sel).unwrap();
            let sup = valid_eta_bound(&dec, &sel, 1.0).unwrap();
            let inside = check_conditions(&a, &preconditioner(&approx, 1.0, 0.95 * sup)).unwrap();
            assert!(inside.spectral_ok, "k = {k}");
            let outside = check_conditions(&a, &preconditioner(&approx, 1.0, 1.05 * sup)).unwrap();
            assert!(!outside.spectral_ok, "k = {k}");
        }
    }

    #[test]
    fn picard_saturates_condition() {
        let a = random_psd(6, 6, 12);
        let dec = EigenDecomposition::new(&a).unwrap();
        let b = picard_construct(&dec, 2.0).unwrap();
        let c = dec.coordinates(&b);
        for (z, l) in c.iter().zip(dec.real_lambdas().unwrap()) {
            assert!((z.re - l * l).abs() < 1e-10 && z.im.abs() < 1e-10);
        }
        let id = EigenDecomposition::from_real_parts(&DMatrix::identity(3, 3), &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(picard_construct(&id, 2.0).unwrap(), DVector::from_element(3, 1.0));
        let neg = EigenDecomposition::from_real_parts(&DMatrix::identity(2, 2), &[1.0, -1.0]).unwrap();
        assert!(matches!(picard_construct(&neg, 2.0), Err(AnalysisError::NegativeEigenvalue { .. })));
    }

    #[test]
    fn rate_bound_at_zero_and_assumption_errors() {
        let dec = EigenDecomposition::from_real_parts(&DMatrix::identity(3, 3), &[4.0, 2.0, 0.0]).unwrap();
        assert_eq!(rate_bound(&dec, 1, 1.0, 0.1, 2.0, 0).unwrap(), 4.0);
        assert!(matches!(rate_bound(&dec, 1, 1.0, 1.0, 2.0, 3), Err(AnalysisError::Assumption(_))));
        assert!(matches!(rate_bound(&dec, 1, 2.5, 0.1, 2.0, 3), Err(AnalysisError::Assumption(_))));
        // All nonzero eigenvalues selected: only the first branch contributes.
        let r = rate_bound(&dec, 2, 0.5, 0.1, 2.0, 5).unwrap();
        let expected = (1.0_f64 - 0.5 - 0.4).abs().powi(5) * 4.0;
        assert!((r - expected.max((1.0_f64 - 0.5 - 0.2).abs().powi(5) * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn psd_selection_vacuously_covers_negatives() {
        let a = random_psd(4, 4, 13);
        let dec = EigenDecomposition::new(&a).unwrap();
        let report = selection_check(&dec, &[1], 1.0, 0.01).unwrap();
        assert!(report.covers_negative && report.eta_ok);
    }
}
