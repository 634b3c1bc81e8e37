//! Vector kernels and the linear solvers behind the forward operator:
//! banded Cholesky for the SPD systems of the state equation, Jacobi
//! preconditioned conjugate gradients, a small dense Cholesky for reduced
//! Newton systems, and a Lanczos estimate of the extreme eigenvalues of a
//! symmetric operator.

use crate::sparse::SparseSymMatrix;
use crate::{Error, Real, Result};

pub fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(&a, &b)| a * b).sum()
}

pub fn norm2<T: Real>(x: &[T]) -> T {
    dot(x, x).sqrt()
}

pub fn norm_inf<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// `y += alpha * x`
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(&a, &b)| a - b).collect()
}

pub fn add<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(&a, &b)| a + b).collect()
}

pub fn scaled<T: Real>(alpha: T, x: &[T]) -> Vec<T> {
    x.iter().map(|&v| alpha * v).collect()
}

/// Cholesky factor `A = L L^T` kept in band storage.
#[derive(Debug, Clone)]
pub struct BandedCholesky<T> {
    n: usize,
    bw: usize,
    // row i holds L[i][i-bw..=i] at offsets 0..=bw
    band: Vec<T>,
    min_pivot: T,
    max_pivot: T,
}

impl<T: Real> BandedCholesky<T> {
    /// Factors an SPD matrix. A pivot that is not larger than
    /// `pivot_tol * max|A_ii|` aborts with [`Error::SingularSystem`].
    pub fn factor(a: &SparseSymMatrix<T>, pivot_tol: T) -> Result<Self> {
        Self::factor_impl(a, pivot_tol, None)
    }

    /// Like [`factor`](Self::factor), but with the exact row sums `A 1`
    /// supplied by the caller. Each pivot is then formed as the row sum of
    /// the current Schur complement minus its off-diagonal entries, which
    /// keeps the trailing pivots accurate when `A` is a small perturbation
    /// of a matrix with zero row sums (the pure-Neumann stiffness).
    pub fn factor_with_row_sums(a: &SparseSymMatrix<T>, pivot_tol: T, row_sums: &[T]) -> Result<Self> {
        Error::check_len("cholesky row sums", a.dim(), row_sums.len())?;
        Self::factor_impl(a, pivot_tol, Some(row_sums))
    }

    fn factor_impl(a: &SparseSymMatrix<T>, pivot_tol: T, row_sums: Option<&[T]>) -> Result<Self> {
        let n = a.dim();
        let bw = a.pattern().half_bandwidth();
        let w = bw + 1;
        let mut band = vec![T::zero(); n * w];
        let mut max_diag = T::zero();
        for i in 0..n {
            let (cols, vals) = a.row_values(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    band[i * w + (j + bw - i)] = v;
                }
                if j == i {
                    max_diag = max_diag.max(v.abs());
                }
            }
        }
        let threshold = pivot_tol * max_diag;
        let mut min_pivot = T::infinity();
        let mut max_pivot = T::zero();
        // eta = L^{-1} (A 1), filled as the factorization proceeds
        let mut eta = vec![T::zero(); if row_sums.is_some() { n } else { 0 }];
        for j in 0..n {
            let j0 = j.saturating_sub(bw);
            let iend = (j + bw + 1).min(n);
            // Schur complement entries below the diagonal in column j
            for i in j + 1..iend {
                let i0 = i.saturating_sub(bw);
                let mut s = band[i * w + (j + bw - i)];
                for k in i0.max(j0)..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                band[i * w + (j + bw - i)] = s;
            }
            let s = match row_sums {
                None => {
                    let mut s = band[j * w + bw];
                    for k in j0..j {
                        let l = band[j * w + (k + bw - j)];
                        s -= l * l;
                    }
                    s
                }
                Some(r) => {
                    let mut rho = r[j];
                    for k in j0..j {
                        rho -= band[j * w + (k + bw - j)] * eta[k];
                    }
                    // entries right of the diagonal in row j are the
                    // column entries below it, by symmetry
                    let mut s = rho;
                    for i in j + 1..iend {
                        s -= band[i * w + (j + bw - i)];
                    }
                    if s > T::zero() {
                        eta[j] = rho / s.sqrt();
                    }
                    s
                }
            };
            if !(s > threshold) {
                let cond = if s > T::zero() { (max_pivot / s).as_f64() } else { f64::INFINITY };
                return Err(Error::SingularSystem {
                    row: j,
                    pivot: s.as_f64(),
                    condition_estimate: cond,
                });
            }
            min_pivot = min_pivot.min(s);
            max_pivot = max_pivot.max(s);
            let d = s.sqrt();
            band[j * w + bw] = d;
            for i in j + 1..iend {
                band[i * w + (j + bw - i)] /= d;
            }
        }
        Ok(Self {
            n,
            bw,
            band,
            min_pivot,
            max_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Ratio of the largest to the smallest pivot; a cheap lower proxy for
    /// the spectral condition number.
    pub fn condition_estimate(&self) -> T {
        self.max_pivot / self.min_pivot
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let i0 = i.saturating_sub(bw);
            let mut s = x[i];
            for k in i0..i {
                s -= self.band[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            x[i] /= self.band[i * w + bw];
            let xi = x[i];
            let i0 = i.saturating_sub(bw);
            for k in i0..i {
                x[k] -= self.band[i * w + (k + bw - i)] * xi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions<T> {
    pub rel_tol: T,
    pub max_iters: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct CgStats<T> {
    pub iterations: usize,
    pub rel_residual: T,
}

/// Conjugate gradients on a symmetric operator with a diagonal
/// preconditioner. A non-positive curvature `p^T A p` is reported as a
/// singular system.
pub fn pcg<T, F>(
    apply: F,
    inv_diag: Option<&[T]>,
    b: &[T],
    x: &mut [T],
    opts: CgOptions<T>,
) -> Result<CgStats<T>>
where
    T: Real,
    F: Fn(&[T], &mut [T]),
{
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(CgStats {
            iterations: 0,
            rel_residual: T::zero(),
        });
    }
    let precond = |r: &[T], z: &mut [T]| match inv_diag {
        Some(d) => z.iter_mut().zip(r.iter().zip(d)).for_each(|(zi, (&ri, &di))| *zi = ri * di),
        None => z.copy_from_slice(r),
    };
    let mut ax = vec![T::zero(); n];
    apply(x, &mut ax);
    let mut r = sub(b, &ax);
    let mut z = vec![T::zero(); n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![T::zero(); n];
    let mut max_curv = T::zero();
    for it in 0..opts.max_iters {
        let rel = norm2(&r) / bnorm;
        if rel <= opts.rel_tol {
            return Ok(CgStats {
                iterations: it,
                rel_residual: rel,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        let pp = dot(&p, &p);
        if !(pap > T::epsilon() * max_curv * pp) {
            return Err(Error::SingularSystem {
                row: it,
                pivot: pap.as_f64(),
                condition_estimate: f64::INFINITY,
            });
        }
        max_curv = max_curv.max(pap / pp);
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let rel = norm2(&r) / bnorm;
    if rel <= opts.rel_tol {
        Ok(CgStats {
            iterations: opts.max_iters,
            rel_residual: rel,
        })
    } else {
        Err(Error::NoConvergence {
            iterations: opts.max_iters,
            residual: rel.as_f64(),
        })
    }
}

/// Dense Cholesky of a row-major SPD matrix; `None` if a pivot is not
/// positive.
pub fn dense_cholesky<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= l[j * n + k] * l[j * n + k];
        }
        if !(s > T::zero()) {
            return None;
        }
        let d = s.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

pub fn dense_cholesky_solve<T: Real>(l: &[T], n: usize, b: &mut [T]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Extreme Ritz values `(min, max)` of a symmetric operator after `steps`
/// Lanczos iterations from a deterministic start vector. Full
/// reorthogonalization keeps the estimate clean for the small step counts
/// used here.
pub fn lanczos_extremes<T, F>(apply: F, n: usize, steps: usize) -> (T, T)
where
    T: Real,
    F: Fn(&[T], &mut [T]),
{
    let steps = steps.min(n).max(1);
    // fixed, non-symmetric start so that no eigenvector is missed by symmetry
    let mut q: Vec<T> = (0..n)
        .map(|i| T::one() + T::lit(0.37) * T::from_usize_lossy(i % 7) - T::lit(0.11) * T::from_usize_lossy(i % 3))
        .collect();
    let qn = norm2(&q);
    q.iter_mut().for_each(|v| *v /= qn);
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<T> = Vec::with_capacity(steps);
    let mut w = vec![T::zero(); n];
    for k in 0..steps {
        apply(&q, &mut w);
        let a = dot(&q, &w);
        alphas.push(a);
        axpy(-a, &q, &mut w);
        if k > 0 {
            axpy(-betas[k - 1], &basis[k - 1], &mut w);
        }
        basis.push(q.clone());
        for b in &basis {
            let c = dot(b, &w);
            axpy(-c, b, &mut w);
        }
        let beta = norm2(&w);
        if k + 1 == steps || beta <= T::epsilon() * a.abs().max(T::one()) {
            break;
        }
        betas.push(beta);
        q = scaled(T::one() / beta, &w);
    }
    tridiagonal_extremes(&alphas, &betas[..alphas.len() - 1])
}

/// Smallest and largest eigenvalue of a symmetric tridiagonal matrix by
/// Sturm-sequence bisection.
pub fn tridiagonal_extremes<T: Real>(diag: &[T], off: &[T]) -> (T, T) {
    let n = diag.len();
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { T::zero() }
            + if i + 1 < n { off[i].abs() } else { T::zero() };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    // number of eigenvalues strictly less than x
    let count_below = |x: T| {
        let mut c = 0usize;
        let mut d = T::one();
        for i in 0..n {
            let o2 = if i > 0 { off[i - 1] * off[i - 1] } else { T::zero() };
            d = diag[i] - x - if i > 0 { o2 / d } else { T::zero() };
            if d == T::zero() {
                d = T::epsilon() * (T::one() + x.abs());
            }
            if d < T::zero() {
                c += 1;
            }
        }
        c
    };
    let bisect = |k: usize| {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = (a + b) / T::lit(2.0);
            if mid == a || mid == b {
                break;
            }
            if count_below(mid) > k {
                b = mid;
            } else {
                a = mid;
            }
        }
        (a + b) / T::lit(2.0)
    };
    (bisect(0), bisect(n - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use crate::sparse::SparsityPattern;
    use std::sync::Arc;

    fn laplace_plus_identity(n: usize) -> SparseSymMatrix<f64> {
        let m = Mesh::<f64>::unit_square(n).unwrap();
        let p = Arc::new(SparsityPattern::from_mesh(&m));
        let geo = m.geometry().to_vec();
        SparseSymMatrix::assemble(&m, p, move |t| {
            let g = geo[t];
            let mut k = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    k[a][b] = g.area * (g.grads[a][0] * g.grads[b][0] + g.grads[a][1] * g.grads[b][1]);
                }
                k[a][a] += g.area / 3.0;
            }
            k
        })
    }

    #[test]
    fn banded_cholesky_solves() {
        let a = laplace_plus_identity(5);
        let x_true: Vec<f64> = (0..a.dim()).map(|i| (i as f64 * 0.7).sin()).collect();
        let b = a.mul_vec(&x_true).unwrap();
        let f = BandedCholesky::factor(&a, 1e-14).unwrap();
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!(f.condition_estimate() >= 1.0);
    }

    #[test]
    fn row_sum_pivots_agree_with_plain_pivots() {
        let a = laplace_plus_identity(5);
        let r = a.mul_vec(&vec![1.0; a.dim()]).unwrap();
        let f = BandedCholesky::factor(&a, 1e-14).unwrap();
        let g = BandedCholesky::factor_with_row_sums(&a, 1e-14, &r).unwrap();
        for (x, y) in f.band.iter().zip(&g.band) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_matches_cholesky() {
        let a = laplace_plus_identity(6);
        let b: Vec<f64> = (0..a.dim()).map(|i| 1.0 + (i % 5) as f64).collect();
        let inv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        let mut x = vec![0.0; a.dim()];
        pcg(
            |v, out| a.matvec_into(v, out),
            Some(&inv),
            &b,
            &mut x,
            CgOptions { rel_tol: 1e-13, max_iters: 500 },
        )
        .unwrap();
        let f = BandedCholesky::factor(&a, 1e-14).unwrap();
        let mut y = b.clone();
        f.solve_in_place(&mut y);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_cholesky_roundtrip() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let l = dense_cholesky(&a, 3).unwrap();
        let mut b = [1.0, 2.0, 3.0];
        dense_cholesky_solve(&l, 3, &mut b);
        let r: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i * 3 + j] * b[j]).sum()).collect();
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14 && (r[2] - 3.0).abs() < 1e-14);
        assert!(dense_cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn lanczos_on_diagonal_operator() {
        let d: Vec<f64> = (0..40).map(|i| -2.0 + 0.25 * i as f64).collect();
        let (lo, hi) = lanczos_extremes(
            |x: &[f64], y: &mut [f64]| {
                for i in 0..x.len() {
                    y[i] = d[i] * x[i];
                }
            },
            40,
            40,
        );
        assert!((lo + 2.0).abs() < 1e-9, "{lo}");
        assert!((hi - 7.75).abs() < 1e-9, "{hi}");
    }
}
