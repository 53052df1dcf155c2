//! Small dense linear-algebra helpers shared by the analysis and learner code.

use nalgebra::{ComplexField, DMatrix, DVector, Dyn, SVD};

/// Relative recomposition error above which nalgebra's bidiagonal SVD is
/// rejected. It occasionally returns factors that do not recompose
/// rank-deficient inputs.
const SVD_RECOMPOSE_TOL: f64 = 1e-11;
const JACOBI_MAX_SWEEPS: usize = 60;

/// Thin SVD. Uses nalgebra's bidiagonal SVD when its factors recompose the
/// input and a one-sided Jacobi SVD otherwise.
pub fn svd<T: ComplexField<RealField = f64>>(m: &DMatrix<T>, compute_u: bool, compute_v: bool) -> SVD<T, Dyn, Dyn> {
    if m.is_empty() {
        return m.clone().svd(compute_u, compute_v);
    }
    let fast = m.clone().svd(true, true);
    let mut out = if recomposes(&fast, m) { fast } else { jacobi_svd(m) };
    if !compute_u {
        out.u = None;
    }
    if !compute_v {
        out.v_t = None;
    }
    out
}

pub fn singular_values<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> DVector<f64> {
    svd(m, false, false).singular_values
}

fn recomposes<T: ComplexField<RealField = f64>>(f: &SVD<T, Dyn, Dyn>, m: &DMatrix<T>) -> bool {
    let (Some(u), Some(v_t)) = (&f.u, &f.v_t) else {
        return false;
    };
    if f.singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return false;
    }
    let sigma = DMatrix::from_diagonal(&f.singular_values.map(|s| T::from_real(s)));
    let residual = (u * sigma * v_t - m).norm();
    residual.is_finite() && residual <= SVD_RECOMPOSE_TOL * m.norm().max(f64::MIN_POSITIVE)
}

/// One-sided (Hestenes) Jacobi SVD: rotates column pairs of `m` until they
/// are mutually orthogonal; the column norms are then the singular values.
fn jacobi_svd<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> SVD<T, Dyn, Dyn> {
    if m.nrows() < m.ncols() {
        let t = jacobi_svd(&m.adjoint());
        return SVD {
            u: t.v_t.map(|v_t| v_t.adjoint()),
            v_t: t.u.map(|u| u.adjoint()),
            singular_values: t.singular_values,
        };
    }
    let (rows, n) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::<T>::identity(n, n);
    let tol = f64::EPSILON * rows as f64;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                let g = gamma.clone().modulus();
                if g == 0.0 || g <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // make the inner product real and positive
                let phase = gamma.unscale(g).conjugate();
                for r in 0..rows {
                    a[(r, q)] = a[(r, q)].clone() * phase.clone();
                }
                for r in 0..n {
                    v[(r, q)] = v[(r, q)].clone() * phase.clone();
                }
                let zeta = (beta - alpha) / (2.0 * g);
                let t = if zeta >= 0.0 { 1.0 } else { -1.0 } / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut u = DMatrix::<T>::zeros(rows, n);
    let mut filled = Vec::with_capacity(n);
    for j in 0..n {
        if norms[j] > 0.0 {
            u.set_column(j, &a.column(j).unscale(norms[j]));
            filled.push(j);
        }
    }
    // complete the left basis where a column vanished
    let mut candidate = 0;
    for j in (0..n).filter(|&j| norms[j] == 0.0) {
        while candidate < rows {
            let mut e = DVector::<T>::zeros(rows);
            e[candidate] = T::one();
            candidate += 1;
            for _ in 0..2 {
                for &k in &filled {
                    let proj = u.column(k).dotc(&e);
                    e -= u.column(k) * proj;
                }
            }
            let norm = e.norm();
            if norm > 0.5 {
                u.set_column(j, &e.unscale(norm));
                filled.push(j);
                break;
            }
        }
    }
    SVD {
        u: Some(u),
        v_t: Some(v.adjoint()),
        singular_values: DVector::from_vec(norms),
    }
}

fn rotate_columns<T: ComplexField<RealField = f64>>(m: &mut DMatrix<T>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let x = m[(r, p)].clone();
        let y = m[(r, q)].clone();
        m[(r, p)] = x.clone().scale(c) - y.clone().scale(s);
        m[(r, q)] = x.scale(s) + y.scale(c);
    }
}

/// Thin SVD with singular values sorted in descending order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let svd = svd(m, true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));

    let sigma = DVector::from_iterator(order.len(), order.iter().map(|&i| s[i]));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    SortedSvd { u, sigma, v }
}

/// Number of singular values strictly above `rel_tol * sigma_1`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = singular_values(m);
    let top = s.max();
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * top).count()
}

/// Moore-Penrose pseudo-inverse, dropping singular values at or below `rel_tol * sigma_1`.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = sorted_svd(m);
    let top = svd.sigma.get(0).copied().unwrap_or(0.0);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for i in 0..svd.sigma.len() {
        let s = svd.sigma[i];
        if top > 0.0 && s > rel_tol * top {
            out += svd.v.column(i) * svd.u.column(i).transpose() / s;
        }
    }
    out
}

/// Orthonormal basis of the null space of a square matrix (columns).
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    assert!(m.is_square(), "null_space expects a square matrix");
    let n = m.ncols();
    let svd = sorted_svd(m);
    let top = svd.sigma.get(0).copied().unwrap_or(0.0);
    let rank = svd
        .sigma
        .iter()
        .filter(|&&s| top > 0.0 && s > rel_tol * top)
        .count();
    DMatrix::from_fn(n, n - rank, |r, c| svd.v[(r, rank + c)])
}

/// Smallest eigenvalue of the symmetric part `(M + M^T) / 2`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Modified Gram-Schmidt QR of a tall matrix with full column rank.
///
/// Columns that are numerically dependent get a zero column in `Q` and a
/// zero diagonal in `R`, so `Q * R` still reproduces the input.
pub fn mgs_qr(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let mut q = m.clone();
    let mut r = DMatrix::zeros(cols, cols);
    for j in 0..cols {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            r[(i, j)] = proj;
            let qi = q.column(i).clone_owned();
            q.column_mut(j).axpy(-proj, &qi, 1.0);
        }
        let norm = q.column(j).norm();
        let scale = m.column(j).norm().max(f64::MIN_POSITIVE);
        if norm > 1e-14 * scale {
            r[(j, j)] = norm;
            q.column_mut(j).unscale_mut(norm);
        } else {
            r[(j, j)] = 0.0;
            q.column_mut(j).fill(0.0);
        }
    }
    debug_assert_eq!(q.nrows(), rows);
    (q, r)
}

/// Largest absolute deviation of `M^T M` from the identity.
pub fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m;
    let mut worst = 0.0_f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
