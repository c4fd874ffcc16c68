//! Dense and operator-form linear algebra.
//!
//! Vectors are plain slices. Operators implement [`LinearOperator`] and are
//! densified column by column for spectral analysis, which always runs in
//! binary64.

use crate::error::{check_len, Error, Result};
use crate::precision::Real;

/// A linear map together with its adjoint.
pub trait LinearOperator<T: Real> {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    /// `out = A x`
    fn apply(&self, x: &[T], out: &mut [T]);
    /// `out = Aᵀ x`
    fn apply_adjoint(&self, x: &[T], out: &mut [T]);
}

const DOT_BLOCK: usize = 8;

/// Inner product with pairwise association over blocks of eight.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= DOT_BLOCK {
        let mut acc = T::zero();
        for (&x, &y) in a.iter().zip(b) {
            acc += x * y;
        }
        return acc;
    }
    let split = (a.len().div_ceil(DOT_BLOCK)).next_power_of_two() / 2 * DOT_BLOCK;
    let split = split.min(a.len() - 1).max(1);
    dot(&a[..split], &b[..split]) + dot(&a[split..], &b[split..])
}

pub fn norm2<T: Real>(a: &[T]) -> f64 {
    dot(a, a).to_f64().sqrt()
}

/// `y += alpha x`
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_len(rows * cols, data.len())?;
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        check_len(self.cols, other.rows)?;
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.rows];
        self.apply(x, &mut y);
        y
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| f64::max(m, x.to_f64().abs()))
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> LinearOperator<T> for DenseMatrix<T> {
    fn dim_in(&self) -> usize {
        self.cols
    }
    fn dim_out(&self) -> usize {
        self.rows
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }
    fn apply_adjoint(&self, x: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), out);
        }
    }
}

/// Form the dense matrix of an operator by applying it to unit vectors.
pub fn densify(op: &dyn LinearOperator<f64>) -> DenseMatrix<f64> {
    let (m, n) = (op.dim_out(), op.dim_in());
    let mut out = DenseMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        for i in 0..m {
            out[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    out
}

/// `x ↦ Aᵀ (A x)` for any operator `A`.
pub struct NormalOperator<'a, T: Real> {
    pub inner: &'a dyn LinearOperator<T>,
}

impl<T: Real> LinearOperator<T> for NormalOperator<'_, T> {
    fn dim_in(&self) -> usize {
        self.inner.dim_in()
    }
    fn dim_out(&self) -> usize {
        self.inner.dim_in()
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        let mut tmp = vec![T::zero(); self.inner.dim_out()];
        self.inner.apply(x, &mut tmp);
        self.inner.apply_adjoint(&tmp, out);
    }
    fn apply_adjoint(&self, x: &[T], out: &mut [T]) {
        self.apply(x, out)
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// Recurrence residual norm, relative to `‖rhs‖`.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Unpreconditioned conjugate gradients (Hestenes–Stiefel) from a zero guess.
///
/// Stops when the recurrence residual satisfies `‖r‖ ≤ tol·‖rhs‖` or after
/// `max_iters` iterations. A NaN or non-positive curvature `pᵀAp` is reported
/// as [`Error::NumericalFailure`] so callers can regularize and retry.
pub fn cg_solve<T: Real>(
    op: &dyn LinearOperator<T>,
    rhs: &[T],
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome<T>> {
    cg_solve_observed(op, rhs, tol, max_iters, |_, _| {})
}

/// [`cg_solve`] with a callback receiving `(iteration, iterate)` after each step.
pub fn cg_solve_observed<T: Real>(
    op: &dyn LinearOperator<T>,
    rhs: &[T],
    tol: f64,
    max_iters: usize,
    mut observe: impl FnMut(usize, &[T]),
) -> Result<CgOutcome<T>> {
    let n = op.dim_in();
    check_len(n, op.dim_out())?;
    check_len(n, rhs.len())?;

    let mut x = vec![T::zero(); n];
    let rhs_norm = norm2(rhs);
    if rhs_norm == 0.0 {
        return Ok(CgOutcome { x, iterations: 0, relative_residual: 0.0, converged: true });
    }
    if !rhs_norm.is_finite() {
        return Err(Error::NumericalFailure("non-finite right-hand side".into()));
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![T::zero(); n];
    let mut rr = dot(&r, &r);
    let mut rel = 1.0;

    for it in 1..=max_iters {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        let pap64 = pap.to_f64();
        if !pap64.is_finite() {
            return Err(Error::NumericalFailure(format!("CG curvature is {pap64} at iteration {it}")));
        }
        if pap64 <= 0.0 {
            return Err(Error::NumericalFailure(format!("CG breakdown: pᵀAp = {pap64:e} at iteration {it}")));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let rr64 = rr_new.to_f64();
        if rr64.is_nan() {
            return Err(Error::NumericalFailure(format!("NaN residual at CG iteration {it}")));
        }
        rel = rr64.sqrt() / rhs_norm;
        observe(it, &x);
        if rel <= tol {
            return Ok(CgOutcome { x, iterations: it, relative_residual: rel, converged: true });
        }
        if rr_new == T::zero() {
            // Exact zero residual in a low precision but above tolerance cannot happen; guard anyway.
            break;
        }
        let beta = rr_new / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Ok(CgOutcome { x, iterations: max_iters, relative_residual: rel, converged: false })
}

/// Full symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector of `values[i]`, when requested.
    pub vectors: Option<DenseMatrix<f64>>,
}

fn check_symmetric(m: &DenseMatrix<f64>) -> Result<()> {
    check_len(m.rows(), m.cols())?;
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let mut asym: f64 = 0.0;
    for i in 0..m.rows() {
        for j in i + 1..m.cols() {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym / scale });
    }
    Ok(())
}

/// Householder tridiagonalization followed by implicit QL iteration.
pub fn sym_eigen(m: &DenseMatrix<f64>, want_vectors: bool) -> Result<SymEigen> {
    check_symmetric(m)?;
    let n = m.rows();
    if n == 0 {
        return Err(Error::Usage("empty matrix".into()));
    }
    // Symmetrize exactly so roundoff asymmetry does not leak in.
    let mut v = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            v[i][j] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e);
    tridiagonal_ql(&mut v, &mut d, &mut e, want_vectors)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = want_vectors.then(|| {
        let mut out = DenseMatrix::zeros(n, n);
        for (col, &src) in order.iter().enumerate() {
            for row in 0..n {
                out[(row, col)] = v[row][src];
            }
        }
        out
    });
    Ok(SymEigen { values, vectors })
}

// Householder reduction to tridiagonal form, accumulating the orthogonal
// transformation in `v`. On exit `d` is the diagonal and `e[1..]` the
// subdiagonal.
fn tridiagonalize(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    d.copy_from_slice(&v[n - 1]);

    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for dk in d[..i].iter_mut() {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e[..i].iter_mut() {
                *ej = 0.0;
            }
            for j in 0..i {
                let f = d[j];
                v[j][i] = f;
                let mut g = e[j] + v[j][j] * f;
                for k in j + 1..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[k][i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

fn tridiagonal_ql(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64], want_vectors: bool) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > 60 {
                    return Err(Error::NumericalFailure("QL iteration did not converge".into()));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d[l + 2..].iter_mut() {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if want_vectors {
                        for row in v.iter_mut() {
                            let h = row[i + 1];
                            row[i + 1] = s * row[i] + c * h;
                            row[i] = c * row[i] - s * h;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremal(m: &DenseMatrix<f64>) -> Result<(f64, f64)> {
    let eig = sym_eigen(m, false)?;
    Ok((eig.values[0], *eig.values.last().unwrap()))
}

/// Spectral condition number of a symmetric positive definite matrix.
pub fn condition_number(m: &DenseMatrix<f64>) -> Result<f64> {
    let (lo, hi) = sym_eig_extremal(m)?;
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite { lambda_min: lo });
    }
    Ok(hi / lo)
}

/// Condition number restricted to the eigenvalues above `rel_threshold·λ_max`.
#[derive(Debug, Clone, Copy)]
pub struct RestrictedSpectrum {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub rank: usize,
}

impl RestrictedSpectrum {
    pub fn condition(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }
}

/// Analysis of a symmetric positive semi-definite matrix on the orthogonal
/// complement of its (numerical) kernel.
pub fn nonzero_spectrum(m: &DenseMatrix<f64>, rel_threshold: f64) -> Result<RestrictedSpectrum> {
    let eig = sym_eigen(m, false)?;
    let lambda_max = *eig.values.last().unwrap();
    if lambda_max <= 0.0 {
        return Err(Error::NotPositiveDefinite { lambda_min: lambda_max });
    }
    let kept: Vec<f64> = eig.values.iter().copied().filter(|&l| l > rel_threshold * lambda_max).collect();
    Ok(RestrictedSpectrum { lambda_min: kept[0], lambda_max, rank: kept.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tridiag(n: usize) -> DenseMatrix<f64> {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 2.0;
            if i + 1 < n {
                m[(i, i + 1)] = -1.0;
                m[(i + 1, i)] = -1.0;
            }
        }
        m
    }

    #[test]
    fn cg_identity_one_iteration() {
        let id = DenseMatrix::<f64>::identity(5);
        let out = cg_solve(&id, &[1.0; 5], 1e-14, 10).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, vec![1.0; 5]);
    }

    #[test]
    fn cg_small_diagonal() {
        let m = DenseMatrix::from_diagonal(&[2.0, 1.0]);
        let out = cg_solve(&m, &[2.0, 1.0], 1e-14, 10).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-14 && (out.x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cg_diag_one_to_ten_finite_termination() {
        let diag: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let m = DenseMatrix::from_diagonal(&diag);
        let out = cg_solve(&m, &[1.0; 10], 1e-12, 10).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 10);
        // componentwise division oracle
        for (i, x) in out.x.iter().enumerate() {
            assert!((x - 1.0 / (i + 1) as f64).abs() < 1e-10, "{i}: {x}");
        }
    }

    #[test]
    fn cg_rejects_bad_dimensions() {
        let m = DenseMatrix::<f64>::identity(3);
        assert!(matches!(cg_solve(&m, &[1.0; 4], 1e-8, 5), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn cg_reports_nan() {
        let m = DenseMatrix::from_diagonal(&[f64::NAN, 1.0]);
        assert!(matches!(cg_solve(&m, &[1.0, 1.0], 1e-8, 5), Err(Error::NumericalFailure(_))));
    }

    #[test]
    fn cg_error_energy_is_monotone() {
        // Small SPD instance against a direct-solve oracle.
        let mut m = tridiag(12);
        for i in 0..12 {
            m[(i, i)] += 0.1 * i as f64;
        }
        let b: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() + 0.2).collect();
        let exact = cg_solve(&m, &b, 1e-15, 200).unwrap().x;
        let mut energies = vec![];
        cg_solve_observed(&m, &b, 1e-15, 12, |_, x| {
            let err: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
            energies.push(dot(&err, &m.matvec(&err)));
        })
        .unwrap();
        let e0 = dot(&exact, &m.matvec(&exact));
        assert!(energies[0] <= e0);
        for w in energies.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-28, "{:?}", w);
        }
    }

    #[test]
    fn eigen_examples() {
        let (lo, hi) = sym_eig_extremal(&DenseMatrix::identity(3)).unwrap();
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 1.0).abs() < 1e-14);
        let (lo, hi) = sym_eig_extremal(&DenseMatrix::from_diagonal(&[1.0, 4.0])).unwrap();
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 4.0).abs() < 1e-14);
        let (lo, hi) = sym_eig_extremal(&tridiag(3)).unwrap();
        let s2 = 2f64.sqrt();
        assert!((lo - (2.0 - s2)).abs() < 1e-12 * 4.0);
        assert!((hi - (2.0 + s2)).abs() < 1e-12 * 4.0);
    }

    #[test]
    fn tridiag_spectrum_matches_cosine_formula() {
        let n = 40;
        let eig = sym_eigen(&tridiag(n), false).unwrap();
        let mut exact: Vec<f64> = (1..=n)
            .map(|k| 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (n + 1) as f64).cos())
            .collect();
        exact.sort_by(f64::total_cmp);
        for (a, b) in eig.values.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn condition_number_examples() {
        assert!((condition_number(&DenseMatrix::identity(4)).unwrap() - 1.0).abs() < 1e-14);
        let c = condition_number(&DenseMatrix::from_diagonal(&[1.0, 100.0])).unwrap();
        assert!((c - 100.0).abs() < 1e-10);
        let indefinite = DenseMatrix::from_diagonal(&[-1.0, 2.0]);
        assert!(matches!(condition_number(&indefinite), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn rejects_nonsymmetric() {
        let m = DenseMatrix::from_row_major(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(sym_eig_extremal(&m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn nonzero_spectrum_skips_kernel() {
        let m = DenseMatrix::from_diagonal(&[0.0, 1e-20, 2.0, 8.0]);
        let s = nonzero_spectrum(&m, 1e-8).unwrap();
        assert_eq!(s.rank, 2);
        assert!((s.condition() - 4.0).abs() < 1e-12);
    }

    fn random_symmetric(n: usize, seed: u64) -> DenseMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let x: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        m
    }

    #[test]
    fn eigen_residuals_and_agreement_with_nalgebra() {
        for seed in 0..4 {
            let n = 30 + 7 * seed as usize;
            let m = random_symmetric(n, seed);
            let eig = sym_eigen(&m, true).unwrap();
            let vecs = eig.vectors.as_ref().unwrap();
            let norm = m.max_abs() * n as f64;
            for idx in [0, n - 1] {
                let x: Vec<f64> = (0..n).map(|r| vecs[(r, idx)]).collect();
                let mx = m.matvec(&x);
                let res: f64 = mx.iter().zip(&x).map(|(a, b)| (a - eig.values[idx] * b).powi(2)).sum::<f64>().sqrt();
                assert!(res <= 1e-8 * norm, "residual {res}");
                assert!((norm2(&x) - 1.0).abs() < 1e-10);
            }
            let na = nalgebra::DMatrix::from_fn(n, n, |i, j| m[(i, j)]);
            let mut reference: Vec<f64> = na.symmetric_eigenvalues().iter().copied().collect();
            reference.sort_by(f64::total_cmp);
            let values_only = sym_eigen(&m, false).unwrap().values;
            for ((a, b), c) in eig.values.iter().zip(&reference).zip(&values_only) {
                assert!((a - b).abs() < 1e-10 && (a - c).abs() < 1e-12);
            }
        }
    }

    struct Shifted(DenseMatrix<f64>);
    impl LinearOperator<f64> for Shifted {
        fn dim_in(&self) -> usize {
            self.0.cols()
        }
        fn dim_out(&self) -> usize {
            self.0.rows()
        }
        fn apply(&self, x: &[f64], out: &mut [f64]) {
            self.0.apply(x, out)
        }
        fn apply_adjoint(&self, x: &[f64], out: &mut [f64]) {
            self.0.apply_adjoint(x, out)
        }
    }

    #[test]
    fn densify_recovers_matrix() {
        let m = DenseMatrix::from_row_major(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(densify(&Shifted(m.clone())), m);
        let normal = NormalOperator { inner: &m };
        assert_eq!(densify(&normal), m.transpose().matmul(&m).unwrap());
    }

    proptest! {
        #[test]
        fn dense_adjoint_consistency(entries in proptest::collection::vec(-1.0f64..1.0, 12),
                                     w in proptest::collection::vec(-1.0f64..1.0, 4),
                                     v in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let m = DenseMatrix::from_row_major(3, 4, entries).unwrap();
            let mut aw = vec![0.0; 3];
            m.apply(&w, &mut aw);
            let mut atv = vec![0.0; 4];
            m.apply_adjoint(&v, &mut atv);
            let lhs = dot(&aw, &v);
            let rhs = dot(&w, &atv);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * norm2(&w).max(1e-300) * norm2(&v).max(1e-300) + 1e-15);
        }

        #[test]
        fn blocked_dot_matches_naive(xs in proptest::collection::vec(-1.0f64..1.0, 0..100)) {
            let naive: f64 = xs.iter().map(|x| x * x).sum();
            prop_assert!((dot(&xs, &xs) - naive).abs() < 1e-12);
        }
    }
}
