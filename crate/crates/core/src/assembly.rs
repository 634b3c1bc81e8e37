//! Discrete operators of the P1 discretization.
//!
//! With `a`, `u`, `v` all P1 on the same triangulation:
//!
//! * `K(A)_ij = int a grad(phi_i) . grad(phi_j)` (stiffness),
//! * `K_tau(A) = K(A) + tau * M_A` with `(M_A)_ij = int a phi_i phi_j`,
//! * `M_ij = int phi_i phi_j`, `W = K(1) + M` (H1 Gram matrix),
//! * `L(V) A = K_tau(A) V` and `(L(V)^T U)_k = T_tau(psi_k, V, U)`.
//!
//! Every element integral here is a polynomial of degree at most three and
//! is evaluated in closed form. The trilinear tensor is never formed; all
//! contractions run as element loops followed by a per-node gather.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::linalg::{self, BandedCholesky};
use crate::mesh::{ElementGeometry, Mesh};
use crate::quadrature::{gauss_legendre_unit, triangle_rule};
use crate::sparse::{SparseSymMatrix, SparsityPattern};
use crate::{Error, Real, Result};

const LOAD_QUADRATURE_ORDER: usize = 6;

/// `int_T lambda_a lambda_b lambda_c / |T|`.
#[inline]
fn triple<T: Real>(a: usize, b: usize, c: usize) -> T {
    if a == b && b == c {
        T::lit(1.0 / 10.0)
    } else if a == b || b == c || a == c {
        T::lit(1.0 / 30.0)
    } else {
        T::lit(1.0 / 60.0)
    }
}

#[inline]
pub(crate) fn dot2<T: Real>(x: [T; 2], y: [T; 2]) -> T {
    x[0] * y[0] + x[1] * y[1]
}

/// Coefficient vector together with the bounds of the admissible set:
/// `c1 <= A_i <= c2` and a cap `c3` on the smoothed total variation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleParameter<T> {
    pub values: Vec<T>,
    pub c1: T,
    pub c2: T,
    pub c3: T,
}

impl<T: Real> AdmissibleParameter<T> {
    pub fn new(values: Vec<T>, c1: T, c2: T, c3: T) -> Result<Self> {
        if !(c1 > T::zero()) || !(c1 < c2) || !(c3 > T::zero()) {
            return Err(Error::invalid("admissible set needs 0 < c1 < c2 and c3 > 0"));
        }
        let p = Self { values, c1, c2, c3 };
        if !p.in_box() {
            return Err(Error::invalid("coefficient outside [c1, c2]"));
        }
        Ok(p)
    }

    pub fn in_box(&self) -> bool {
        self.values.iter().all(|&a| a >= self.c1 && a <= self.c2)
    }

    /// Smoothed total variation `sum_T |T| sqrt(|grad a|^2 + beta^2)`.
    pub fn total_variation(&self, mesh: &Mesh<T>, beta: T) -> T {
        smoothed_tv(mesh, &self.values, beta)
    }

    pub fn tv_within_cap(&self, mesh: &Mesh<T>, beta: T) -> bool {
        self.total_variation(mesh, beta) <= self.c3
    }
}

pub(crate) fn element_gradient<T: Real>(g: &ElementGeometry<T>, tri: &[usize; 3], v: &[T]) -> [T; 2] {
    let mut d = [T::zero(); 2];
    for k in 0..3 {
        d[0] += v[tri[k]] * g.grads[k][0];
        d[1] += v[tri[k]] * g.grads[k][1];
    }
    d
}

pub fn smoothed_tv<T: Real>(mesh: &Mesh<T>, a: &[T], beta: T) -> T {
    mesh.triangles()
        .iter()
        .zip(mesh.geometry())
        .map(|(tri, g)| {
            let d = element_gradient(g, tri, a);
            g.area * (dot2(d, d) + beta * beta).sqrt()
        })
        .sum()
}

/// How the `eps * ell(v)` part of the load is formed.
#[derive(Debug, Clone, Copy)]
pub enum Steering<'a, T> {
    /// `ell = 0`.
    Zero,
    /// `ell(v) = <z, v>_V`, i.e. `W z`.
    Data(&'a [T]),
}

/// Right-hand side data of the state equation.
pub struct LoadData<'a, T> {
    pub f: &'a (dyn Fn(T, T) -> T + Sync),
    /// Neumann flux, evaluated at a boundary point with its outward normal.
    pub g: &'a (dyn Fn(T, T, [T; 2]) -> T + Sync),
}

/// Assembly context for one mesh: shares the sparsity pattern and caches
/// the parameter-independent matrices.
#[derive(Debug)]
pub struct Assembler<T> {
    mesh: Arc<Mesh<T>>,
    pattern: Arc<SparsityPattern>,
    mass: SparseSymMatrix<T>,
    s_matrix: SparseSymMatrix<T>,
    s_factor: OnceLock<BandedCholesky<T>>,
}

impl<T: Real> Assembler<T> {
    pub fn new(mesh: Arc<Mesh<T>>) -> Self {
        let pattern = Arc::new(SparsityPattern::from_mesh(&mesh));
        let mass = assemble_mass_with(&mesh, &pattern);
        let ones = vec![T::one(); mesh.node_count()];
        let s_matrix = assemble_stiffness_with(&mesh, &pattern, &ones)
            .add_scaled(T::one(), &mass)
            .expect("shared pattern");
        Self {
            mesh,
            pattern,
            mass,
            s_matrix,
            s_factor: OnceLock::new(),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh<T>> {
        &self.mesh
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.mesh.node_count()
    }

    fn check(&self, context: &'static str, v: &[T]) -> Result<()> {
        Error::check_len(context, self.dim(), v.len())
    }

    /// `K(A)`; each element matrix has exactly zero row sums (its diagonal
    /// is minus the sum of its off-diagonal entries).
    pub fn stiffness(&self, a: &[T]) -> Result<SparseSymMatrix<T>> {
        self.check("stiffness coefficient", a)?;
        Ok(assemble_stiffness_with(&self.mesh, &self.pattern, a))
    }

    /// `K_tau(A) = K(A) + tau * M_A`.
    pub fn perturbed_stiffness(&self, a: &[T], tau: T) -> Result<SparseSymMatrix<T>> {
        if tau < T::zero() {
            return Err(Error::invalid("operator perturbation tau must be >= 0"));
        }
        let k = self.stiffness(a)?;
        if tau == T::zero() {
            return Ok(k);
        }
        k.add_scaled(tau, &self.weighted_mass(a)?)
    }

    pub fn mass(&self) -> &SparseSymMatrix<T> {
        &self.mass
    }

    /// Gram matrix `W` of `S(u, v) = int grad u . grad v + int u v`.
    pub fn s_matrix(&self) -> &SparseSymMatrix<T> {
        &self.s_matrix
    }

    /// `(M_A)_ij = int a phi_i phi_j`.
    pub fn weighted_mass(&self, a: &[T]) -> Result<SparseSymMatrix<T>> {
        self.check("weighted mass coefficient", a)?;
        let mesh = &self.mesh;
        Ok(SparseSymMatrix::assemble(mesh, Arc::clone(&self.pattern), |t| {
            let tri = mesh.triangles()[t];
            let area = mesh.geometry()[t].area;
            let mut m = [[T::zero(); 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    let s: T = (0..3).map(|c| a[tri[c]] * triple::<T>(i, j, c)).sum();
                    m[i][j] = area * s;
                }
            }
            m
        }))
    }

    /// `P_i = int f phi_i + int_{dOmega} g phi_i + nu * p_i + eps * ell(phi_i)`
    /// where `p` is a perturbation functional (see [`crate::noise`]).
    pub fn load(
        &self,
        data: &LoadData<'_, T>,
        functional_noise: Option<(T, &[T])>,
        steering: Steering<'_, T>,
        eps: T,
    ) -> Result<Vec<T>> {
        let mut p = self.source_load(data.f);
        self.add_boundary_load(data.g, &mut p);
        if let Some((nu, dir)) = functional_noise {
            self.check("functional perturbation", dir)?;
            linalg::axpy(nu, dir, &mut p);
        }
        if let Steering::Data(z) = steering {
            self.check("steering data", z)?;
            let wz = self.s_matrix.mul_vec(z)?;
            linalg::axpy(eps, &wz, &mut p);
        }
        Ok(p)
    }

    fn source_load(&self, f: &(dyn Fn(T, T) -> T + Sync)) -> Vec<T> {
        let mesh = &self.mesh;
        let rule = triangle_rule::<T>(LOAD_QUADRATURE_ORDER);
        let locals: Vec<[T; 3]> = (0..mesh.triangle_count())
            .into_par_iter()
            .map(|t| {
                let tri = mesh.triangles()[t];
                let [p0, p1, p2] = [mesh.nodes()[tri[0]], mesh.nodes()[tri[1]], mesh.nodes()[tri[2]]];
                let jac = T::lit(2.0) * mesh.geometry()[t].area;
                let mut out = [T::zero(); 3];
                for q in &rule {
                    let l0 = T::one() - q.xi - q.eta;
                    let x = p0[0] * l0 + p1[0] * q.xi + p2[0] * q.eta;
                    let y = p0[1] * l0 + p1[1] * q.xi + p2[1] * q.eta;
                    let w = q.weight * jac * f(x, y);
                    out[0] += w * l0;
                    out[1] += w * q.xi;
                    out[2] += w * q.eta;
                }
                out
            })
            .collect();
        self.gather(&locals)
    }

    fn add_boundary_load(&self, g: &(dyn Fn(T, T, [T; 2]) -> T + Sync), p: &mut [T]) {
        let rule = gauss_legendre_unit::<T>(LOAD_QUADRATURE_ORDER);
        for e in self.mesh.boundary_edges() {
            let (a, b) = (self.mesh.nodes()[e.from], self.mesh.nodes()[e.to]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let (mut sa, mut sb) = (T::zero(), T::zero());
            for &(s, w) in &rule {
                let x = a[0] + s * (b[0] - a[0]);
                let y = a[1] + s * (b[1] - a[1]);
                let gw = w * len * g(x, y, e.normal);
                sa += gw * (T::one() - s);
                sb += gw * s;
            }
            p[e.from] += sa;
            p[e.to] += sb;
        }
    }

    /// Sums per-element 3-vectors into a nodal vector (gather over the
    /// incident triangles of each node, ascending).
    pub fn gather(&self, locals: &[[T; 3]]) -> Vec<T> {
        let mesh = &self.mesh;
        (0..mesh.node_count())
            .into_par_iter()
            .map(|i| {
                let mut s = T::zero();
                for &t in mesh.triangles_of(i) {
                    let tri = mesh.triangles()[t];
                    let a = tri.iter().position(|&v| v == i).expect("incident triangle");
                    s += locals[t][a];
                }
                s
            })
            .collect()
    }

    /// `L(V) A = K_tau(A) V`, element by element.
    pub fn apply_l(&self, v: &[T], a: &[T], tau: T) -> Result<Vec<T>> {
        self.check("apply_l state", v)?;
        self.check("apply_l coefficient", a)?;
        let mesh = &self.mesh;
        let locals: Vec<[T; 3]> = (0..mesh.triangle_count())
            .into_par_iter()
            .map(|t| {
                let tri = mesh.triangles()[t];
                let g = &mesh.geometry()[t];
                let abar = (a[tri[0]] + a[tri[1]] + a[tri[2]]) / T::lit(3.0);
                let dv = element_gradient(g, &tri, v);
                let mut out = [T::zero(); 3];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = abar * g.area * dot2(g.grads[i], dv);
                    if tau != T::zero() {
                        let mut s = T::zero();
                        for j in 0..3 {
                            for c in 0..3 {
                                s += a[tri[c]] * v[tri[j]] * triple::<T>(i, j, c);
                            }
                        }
                        *o += tau * g.area * s;
                    }
                }
                out
            })
            .collect();
        Ok(self.gather(&locals))
    }

    /// `(L(V)^T U)_k = int psi_k grad v . grad u + tau int psi_k v u`.
    pub fn apply_lt(&self, v: &[T], u: &[T], tau: T) -> Result<Vec<T>> {
        self.check("apply_lt first state", v)?;
        self.check("apply_lt second state", u)?;
        let mesh = &self.mesh;
        let third = T::lit(1.0 / 3.0);
        let locals: Vec<[T; 3]> = (0..mesh.triangle_count())
            .into_par_iter()
            .map(|t| {
                let tri = mesh.triangles()[t];
                let g = &mesh.geometry()[t];
                let dv = element_gradient(g, &tri, v);
                let du = element_gradient(g, &tri, u);
                let grad_part = g.area * third * dot2(dv, du);
                let mut out = [grad_part; 3];
                if tau != T::zero() {
                    for (k, o) in out.iter_mut().enumerate() {
                        let mut s = T::zero();
                        for i in 0..3 {
                            for j in 0..3 {
                                s += v[tri[i]] * u[tri[j]] * triple::<T>(k, i, j);
                            }
                        }
                        *o += tau * g.area * s;
                    }
                }
                out
            })
            .collect();
        Ok(self.gather(&locals))
    }

    /// `sqrt(v^T M v)`.
    pub fn l2_norm(&self, v: &[T]) -> T {
        self.mass.bilinear(v, v).max(T::zero()).sqrt()
    }

    /// `sqrt(v^T W v)`.
    pub fn h1_norm(&self, v: &[T]) -> T {
        self.s_matrix.bilinear(v, v).max(T::zero()).sqrt()
    }

    /// Riesz representative `W^{-1} r` of a discrete functional.
    pub fn riesz(&self, r: &[T]) -> Result<Vec<T>> {
        self.check("riesz functional", r)?;
        let f = self.s_factor();
        let mut x = r.to_vec();
        f.solve_in_place(&mut x);
        Ok(x)
    }

    /// Discrete dual norm `sqrt(r^T W^{-1} r)`.
    pub fn dual_norm(&self, r: &[T]) -> Result<T> {
        let x = self.riesz(r)?;
        Ok(linalg::dot(r, &x).max(T::zero()).sqrt())
    }

    fn s_factor(&self) -> &BandedCholesky<T> {
        self.s_factor.get_or_init(|| {
            BandedCholesky::factor(&self.s_matrix, T::epsilon()).expect("W is positive definite")
        })
    }
}

fn assemble_stiffness_with<T: Real>(
    mesh: &Mesh<T>,
    pattern: &Arc<SparsityPattern>,
    a: &[T],
) -> SparseSymMatrix<T> {
    SparseSymMatrix::assemble(mesh, Arc::clone(pattern), |t| {
        let tri = mesh.triangles()[t];
        let g = &mesh.geometry()[t];
        let w = g.area * (a[tri[0]] + a[tri[1]] + a[tri[2]]) / T::lit(3.0);
        let mut k = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in (i + 1)..3 {
                let v = w * dot2(g.grads[i], g.grads[j]);
                k[i][j] = v;
                k[j][i] = v;
            }
        }
        for i in 0..3 {
            let off: T = (0..3).filter(|&j| j != i).map(|j| k[i][j]).sum();
            k[i][i] = -off;
        }
        k
    })
}

fn assemble_mass_with<T: Real>(mesh: &Mesh<T>, pattern: &Arc<SparsityPattern>) -> SparseSymMatrix<T> {
    let (diag, off) = (T::lit(1.0 / 6.0), T::lit(1.0 / 12.0));
    SparseSymMatrix::assemble(mesh, Arc::clone(pattern), |t| {
        let area = mesh.geometry()[t].area;
        let mut m = [[area * off; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = area * diag;
        }
        m
    })
}
