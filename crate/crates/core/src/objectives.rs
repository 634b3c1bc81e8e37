//! OLS and MOLS objectives, their gradients and Hessians, regularizers and
//! sampled variational-inequality residuals.
//!
//! Notation: `S = K_tau(A) + eps W` is the regularized system matrix of a
//! [`RegularizedForwardOperator`], `G` the Gram matrix of the data space and
//! `L(V)` the linear map `A -> K_tau(A) V`.

use rayon::prelude::*;

use crate::assembly::{dot2, element_gradient, smoothed_tv, Assembler};
use crate::forward::RegularizedForwardOperator;
use crate::linalg;
use crate::noise;
use crate::{Error, Real, Result};

/// Stream id of the random admissible points used by the VI residuals.
pub const VI_STREAM: u64 = 3;
/// Number of random admissible points used by the VI residuals.
pub const VI_RANDOM_SAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectiveKind {
    #[default]
    Ols,
    Mols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Direct,
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularizerKind<T> {
    /// `1/2 A^T W A`
    H1,
    /// `sum_T |T| sqrt(|grad a|^2 + beta^2)`
    SmoothedTv { beta: T },
}

/// Regularization functional `R(A)` with weight `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer<T> {
    pub kind: RegularizerKind<T>,
    pub weight: T,
}

impl<T: Real> Regularizer<T> {
    pub fn h1(weight: T) -> Self {
        Self {
            kind: RegularizerKind::H1,
            weight,
        }
    }

    pub fn smoothed_tv(weight: T, beta: T) -> Result<Self> {
        if !(beta > T::zero()) {
            return Err(Error::invalid("TV smoothing beta must be > 0"));
        }
        Ok(Self {
            kind: RegularizerKind::SmoothedTv { beta },
            weight,
        })
    }

    pub fn with_weight(self, weight: T) -> Self {
        Self { weight, ..self }
    }

    /// Unweighted `R(A)`.
    pub fn value(&self, asm: &Assembler<T>, a: &[T]) -> Result<T> {
        Error::check_len("regularizer", asm.dim(), a.len())?;
        Ok(match self.kind {
            RegularizerKind::H1 => T::lit(0.5) * asm.s_matrix().bilinear(a, a),
            RegularizerKind::SmoothedTv { beta } => smoothed_tv(asm.mesh(), a, beta),
        })
    }

    /// Unweighted gradient of `R`.
    pub fn gradient(&self, asm: &Assembler<T>, a: &[T]) -> Result<Vec<T>> {
        Error::check_len("regularizer", asm.dim(), a.len())?;
        match self.kind {
            RegularizerKind::H1 => asm.s_matrix().mul_vec(a),
            RegularizerKind::SmoothedTv { beta } => Ok(tv_elementwise(asm, a, None, beta)),
        }
    }

    /// Unweighted Hessian action of `R` at `A` in direction `dA`.
    pub fn hessian_action(&self, asm: &Assembler<T>, a: &[T], da: &[T]) -> Result<Vec<T>> {
        Error::check_len("regularizer", asm.dim(), a.len())?;
        Error::check_len("regularizer direction", asm.dim(), da.len())?;
        match self.kind {
            RegularizerKind::H1 => asm.s_matrix().mul_vec(da),
            RegularizerKind::SmoothedTv { beta } => Ok(tv_elementwise(asm, a, Some(da), beta)),
        }
    }

    /// `R(A + t e_j) - R(A)`.
    fn coordinate_increment(&self, asm: &Assembler<T>, a: &[T], r_a: T, j: usize, t: T) -> Result<T> {
        match self.kind {
            RegularizerKind::H1 => {
                let w = asm.s_matrix();
                let (cols, vals) = w.row_values(j);
                let wa: T = cols.iter().zip(vals).map(|(&k, &v)| v * a[k]).sum();
                Ok(t * wa + T::lit(0.5) * t * t * w.get(j, j))
            }
            RegularizerKind::SmoothedTv { .. } => {
                let mut b = a.to_vec();
                b[j] += t;
                Ok(self.value(asm, &b)? - r_a)
            }
        }
    }
}

/// Gradient (`da = None`) or Hessian action of the smoothed TV functional.
fn tv_elementwise<T: Real>(asm: &Assembler<T>, a: &[T], da: Option<&[T]>, beta: T) -> Vec<T> {
    let mesh = asm.mesh();
    let locals: Vec<[T; 3]> = (0..mesh.triangle_count())
        .into_par_iter()
        .map(|t| {
            let tri = mesh.triangles()[t];
            let g = &mesh.geometry()[t];
            let ga = element_gradient(g, &tri, a);
            let s = (dot2(ga, ga) + beta * beta).sqrt();
            let mut out = [T::zero(); 3];
            for (i, o) in out.iter_mut().enumerate() {
                *o = match da {
                    None => g.area * dot2(g.grads[i], ga) / s,
                    Some(d) => {
                        let gd = element_gradient(g, &tri, d);
                        g.area * (dot2(g.grads[i], gd) / s - dot2(g.grads[i], ga) * dot2(ga, gd) / (s * s * s))
                    }
                };
            }
            out
        })
        .collect();
    asm.gather(&locals)
}

/// Result of one objective evaluation.
#[derive(Debug, Clone)]
pub struct ObjectiveReport<T> {
    pub kind: ObjectiveKind,
    /// misfit plus `kappa R(A)`
    pub value: T,
    pub gradient: Vec<T>,
    /// data-space norm of `V - Z` (energy norm for MOLS)
    pub misfit_norm: T,
    /// unweighted `R(A)`
    pub regularizer_value: T,
    pub route: Route,
    pub state: Vec<T>,
    /// adjoint state `S^{-1} G (Z - V)` (OLS only)
    pub adjoint: Option<Vec<T>>,
}

/// `1/2 (V - Z)^T G (V - Z)`.
pub fn ols_value<T: Real>(op: &RegularizedForwardOperator<T>, v: &[T], z: &[T]) -> Result<T> {
    Error::check_len("ols data", v.len(), z.len())?;
    let d = linalg::sub(v, z);
    Ok(T::lit(0.5) * op.data_gram().bilinear(&d, &d))
}

/// `-L(V)^T Q` with `S Q = G (V - Z)`.
pub fn ols_gradient_direct<T: Real>(op: &RegularizedForwardOperator<T>, v: &[T], z: &[T]) -> Result<Vec<T>> {
    Error::check_len("ols data", v.len(), z.len())?;
    let q = op.solve(&op.data_gram().mul_vec(&linalg::sub(v, z))?)?;
    let g = op.assembler().apply_lt(v, &q, op.tau())?;
    Ok(linalg::scaled(-T::one(), &g))
}

/// `kappa grad R(A) + L(V)^T w` with `w` the adjoint state.
pub fn ols_gradient_adjoint<T: Real>(
    op: &RegularizedForwardOperator<T>,
    v: &[T],
    w_adj: &[T],
    reg: &Regularizer<T>,
) -> Result<Vec<T>> {
    let asm = op.assembler();
    let mut g = asm.apply_lt(v, w_adj, op.tau())?;
    if reg.weight != T::zero() {
        linalg::axpy(reg.weight, &reg.gradient(asm, op.coefficient())?, &mut g);
    }
    Ok(g)
}

/// OLS Hessian action by the three-term matrix formula:
/// `s = S^{-1} L(V) dA`, `t = S^{-1} [L(Q) dA + G s]`,
/// `H dA = L(V)^T t + L(Q)^T s + kappa R'' dA` with `Q = -w`.
pub fn ols_hessian_action<T: Real>(
    op: &RegularizedForwardOperator<T>,
    v: &[T],
    w_adj: &[T],
    reg: &Regularizer<T>,
    da: &[T],
) -> Result<Vec<T>> {
    let asm = op.assembler();
    let tau = op.tau();
    let q = linalg::scaled(-T::one(), w_adj);
    let s = op.solve(&asm.apply_l(v, da, tau)?)?;
    let rhs = linalg::add(&asm.apply_l(&q, da, tau)?, &op.data_gram().mul_vec(&s)?);
    let t = op.solve(&rhs)?;
    let mut h = linalg::add(&asm.apply_lt(v, &t, tau)?, &asm.apply_lt(&q, &s, tau)?);
    if reg.weight != T::zero() {
        linalg::axpy(reg.weight, &reg.hessian_action(asm, op.coefficient(), da)?, &mut h);
    }
    Ok(h)
}

/// `dA1^T H dA2` through first and second sensitivities:
/// `kappa R''(dA1, dA2) + <dV1, dV2>_G + <D2V(dA1, dA2), V - Z>_G`.
pub fn ols_hessian_bilinear_sensitivity<T: Real>(
    op: &RegularizedForwardOperator<T>,
    v: &[T],
    z: &[T],
    reg: &Regularizer<T>,
    da1: &[T],
    da2: &[T],
) -> Result<T> {
    let g = op.data_gram();
    let dv1 = op.solve_sensitivity(v, da1)?;
    let dv2 = op.solve_sensitivity(v, da2)?;
    let d2v = op.solve_second_sensitivity(da1, da2, &dv1, &dv2)?;
    let mut h = g.bilinear(&dv1, &dv2) + g.bilinear(&d2v, &linalg::sub(v, z));
    if reg.weight != T::zero() {
        let r = reg.hessian_action(op.assembler(), op.coefficient(), da2)?;
        h += reg.weight * linalg::dot(da1, &r);
    }
    Ok(h)
}

/// Dense matrix (row-major) from a symmetric operator, one column per unit
/// vector; columns are computed in parallel.
pub fn dense_from_action<T, F>(m: usize, action: F) -> Result<Vec<T>>
where
    T: Real,
    F: Fn(&[T]) -> Result<Vec<T>> + Sync,
{
    let cols: Vec<Vec<T>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![T::zero(); m];
            e[j] = T::one();
            action(&e)
        })
        .collect::<Result<_>>()?;
    let mut h = vec![T::zero(); m * m];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..m {
            h[i * m + j] = c[i];
        }
    }
    Ok(h)
}

pub fn ols_hessian_dense<T: Real>(
    op: &RegularizedForwardOperator<T>,
    v: &[T],
    w_adj: &[T],
    reg: &Regularizer<T>,
) -> Result<Vec<T>> {
    dense_from_action(op.dim(), |e| ols_hessian_action(op, v, w_adj, reg, e))
}

/// `1/2 (V - Z)^T S (V - Z)`.
pub fn mols_value<T: Real>(op: &RegularizedForwardOperator<T>, v: &[T], z: &[T]) -> Result<T> {
    Error::check_len("mols data", v.len(), z.len())?;
    let d = linalg::sub(v, z);
    Ok(T::lit(0.5) * op.system().bilinear(&d, &d))
}

/// `-1/2 L(V + Z)^T (V - Z)`; no linear solve.
pub fn mols_gradient<T: Real>(op: &RegularizedForwardOperator<T>, v: &[T], z: &[T]) -> Result<Vec<T>> {
    Error::check_len("mols data", v.len(), z.len())?;
    let g = op.assembler().apply_lt(&linalg::add(v, z), &linalg::sub(v, z), op.tau())?;
    Ok(linalg::scaled(-T::lit(0.5), &g))
}

/// `-1/2 L(V)^T V + 1/2 L(Z)^T Z`.
pub fn mols_gradient_split<T: Real>(op: &RegularizedForwardOperator<T>, v: &[T], z: &[T]) -> Result<Vec<T>> {
    let asm = op.assembler();
    let gv = asm.apply_lt(v, v, op.tau())?;
    let gz = asm.apply_lt(z, z, op.tau())?;
    Ok(gz.iter().zip(&gv).map(|(&b, &a)| T::lit(0.5) * (b - a)).collect())
}

/// `L(V)^T S^{-1} L(V) dA`.
pub fn mols_hessian_action<T: Real>(op: &RegularizedForwardOperator<T>, v: &[T], da: &[T]) -> Result<Vec<T>> {
    let asm = op.assembler();
    let q = op.solve(&asm.apply_l(v, da, op.tau())?)?;
    asm.apply_lt(v, &q, op.tau())
}

pub fn mols_hessian_dense<T: Real>(op: &RegularizedForwardOperator<T>, v: &[T]) -> Result<Vec<T>> {
    dense_from_action(op.dim(), |e| mols_hessian_action(op, v, e))
}

/// Solves the state for `load` and evaluates the chosen objective with its
/// gradient (adjoint route for OLS).
pub fn evaluate<T: Real>(
    kind: ObjectiveKind,
    op: &RegularizedForwardOperator<T>,
    load: &[T],
    z: &[T],
    reg: &Regularizer<T>,
) -> Result<ObjectiveReport<T>> {
    let asm = op.assembler();
    let a = op.coefficient();
    let v = op.solve_state(load)?;
    let r = reg.value(asm, a)?;
    let (misfit, gradient, adjoint, route) = match kind {
        ObjectiveKind::Ols => {
            let w = op.solve_adjoint(&v, z)?;
            let g = ols_gradient_adjoint(op, &v, &w, reg)?;
            (ols_value(op, &v, z)?, g, Some(w), Route::Adjoint)
        }
        ObjectiveKind::Mols => {
            let mut g = mols_gradient(op, &v, z)?;
            if reg.weight != T::zero() {
                linalg::axpy(reg.weight, &reg.gradient(asm, a)?, &mut g);
            }
            (mols_value(op, &v, z)?, g, None, Route::Direct)
        }
    };
    Ok(ObjectiveReport {
        kind,
        value: misfit + reg.weight * r,
        gradient,
        misfit_norm: (T::lit(2.0) * misfit).max(T::zero()).sqrt(),
        regularizer_value: r,
        route,
        state: v,
        adjoint,
    })
}

/// Hessian action of the objective described by `report` (which must come
/// from [`evaluate`] with the same operator).
pub fn hessian_action<T: Real>(
    op: &RegularizedForwardOperator<T>,
    report: &ObjectiveReport<T>,
    reg: &Regularizer<T>,
    da: &[T],
) -> Result<Vec<T>> {
    match report.kind {
        ObjectiveKind::Ols => {
            let w = report.adjoint.as_ref().expect("OLS report carries the adjoint");
            ols_hessian_action(op, &report.state, w, reg, da)
        }
        ObjectiveKind::Mols => {
            let mut h = mols_hessian_action(op, &report.state, da)?;
            if reg.weight != T::zero() {
                linalg::axpy(reg.weight, &reg.hessian_action(op.assembler(), op.coefficient(), da)?, &mut h);
            }
            Ok(h)
        }
    }
}

/// Minimum over sampled admissible `a` of `g . (a - a*) + kappa (R(a) - R(a*))`.
///
/// The samples are the `2m` points obtained by moving one coordinate of
/// `a*` to either box face, plus [`VI_RANDOM_SAMPLES`] seeded uniform points
/// in the box. At a minimizer of `misfit + kappa R` over the box, with `g`
/// the misfit gradient, every sample is nonnegative.
pub fn vi_residual<T: Real>(
    asm: &Assembler<T>,
    g: &[T],
    reg: &Regularizer<T>,
    a_star: &[T],
    bounds: (T, T),
    seed: u64,
) -> Result<T> {
    let m = a_star.len();
    Error::check_len("vi gradient", m, g.len())?;
    let (c1, c2) = bounds;
    let r_star = reg.value(asm, a_star)?;
    let kappa = reg.weight;
    let faces: Vec<T> = (0..m)
        .into_par_iter()
        .map(|j| -> Result<T> {
            let mut best = T::infinity();
            for face in [c1, c2] {
                let t = face - a_star[j];
                let dr = if kappa == T::zero() {
                    T::zero()
                } else {
                    reg.coordinate_increment(asm, a_star, r_star, j, t)?
                };
                best = best.min(g[j] * t + kappa * dr);
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let mut worst = faces.into_iter().fold(T::infinity(), T::min);
    let u = noise::uniform_stream::<T>(seed, VI_STREAM, VI_RANDOM_SAMPLES * m);
    for chunk in u.chunks(m) {
        let a: Vec<T> = chunk.iter().map(|&x| c1 + (c2 - c1) * x).collect();
        let d = linalg::sub(&a, a_star);
        let dr = if kappa == T::zero() { T::zero() } else { reg.value(asm, &a)? - r_star };
        worst = worst.min(linalg::dot(g, &d) + kappa * dr);
    }
    Ok(worst)
}

/// Sampled residual of `T_tau(a - a*, u*, p*) - kappa (R(a*) - R(a)) >= 0`
/// where `p*` solves the adjoint equation with right-hand side `G (z - u*)`.
pub fn ols_optimality_residual<T: Real>(
    op: &RegularizedForwardOperator<T>,
    v: &[T],
    z: &[T],
    reg: &Regularizer<T>,
    bounds: (T, T),
    seed: u64,
) -> Result<T> {
    let p = op.solve_adjoint(v, z)?;
    let g = op.assembler().apply_lt(v, &p, op.tau())?;
    vi_residual(op.assembler(), &g, reg, op.coefficient(), bounds, seed)
}

/// Sampled residual of `-1/2 T_tau(a - a*, u* + z, u* - z) - kappa (R(a*) - R(a)) >= 0`.
pub fn mols_optimality_residual<T: Real>(
    op: &RegularizedForwardOperator<T>,
    v: &[T],
    z: &[T],
    reg: &Regularizer<T>,
    bounds: (T, T),
    seed: u64,
) -> Result<T> {
    let g = mols_gradient(op, v, z)?;
    vi_residual(op.assembler(), &g, reg, op.coefficient(), bounds, seed)
}
