//! Regularized state equation `[K_tau(A) + eps W] V = P` with its first and
//! second order sensitivity equations and the adjoint equation.
//!
//! For `eps > 0` the system matrix is SPD (`K_tau(A)` is PSD when `A >= 0`
//! and `W` is PD), so one factorization serves every solve at a fixed
//! `(A, eps, tau)`. For `eps = 0` the pure-Neumann stiffness annihilates
//! constants; the factorization then breaks down and the failure is returned
//! as [`Error::SingularSystem`] with a condition estimate.

use std::sync::Arc;

use crate::assembly::Assembler;
use crate::linalg::{self, BandedCholesky, CgOptions};
use crate::sparse::SparseSymMatrix;
use crate::{Error, Real, Result};

/// Limit (unregularized) operator of the state equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StateForm {
    /// `T(a, u, v) = int a grad u . grad v`; constants are in the kernel.
    #[default]
    PureNeumann,
    /// `T(a, u, v) + S(u, v)`: a coercive surrogate whose limit problem is
    /// uniquely solvable. The added term does not depend on `a`.
    Coercive,
}

/// Inner product of the data space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DataNorm {
    /// `Z = L2`, Gram matrix `M`.
    #[default]
    L2,
    /// `Z = V = H1`, Gram matrix `W`.
    H1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    #[default]
    Cholesky,
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardSettings<T> {
    pub eps: T,
    pub tau: T,
    pub form: StateForm,
    pub data_norm: DataNorm,
    pub solver: SolverKind,
    /// relative residual target for conjugate gradients
    pub solver_tol: T,
    /// pivots below `pivot_tol * max|diag|` count as breakdown
    pub pivot_tol: T,
}

impl<T: Real> ForwardSettings<T> {
    pub fn new(eps: T, tau: T) -> Self {
        Self {
            eps,
            tau,
            form: StateForm::PureNeumann,
            data_norm: DataNorm::L2,
            solver: SolverKind::Cholesky,
            solver_tol: T::lit(1e-12),
            pivot_tol: T::epsilon() * T::lit(16.0),
        }
    }

    pub fn with_form(mut self, form: StateForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_data_norm(mut self, norm: DataNorm) -> Self {
        self.data_norm = norm;
        self
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }
}

/// Condition estimates above this are reported as near-singular.
pub const NEAR_SINGULAR_CONDITION: f64 = 1e10;

#[derive(Debug, Clone)]
enum Solver<T> {
    Cholesky(BandedCholesky<T>),
    Cg { inv_diag: Vec<T>, opts: CgOptions<T> },
}

/// Factorized `K_tau(A) + eps W` (plus `W` for the coercive surrogate) at a
/// fixed coefficient.
#[derive(Debug, Clone)]
pub struct RegularizedForwardOperator<T> {
    asm: Arc<Assembler<T>>,
    a: Vec<T>,
    settings: ForwardSettings<T>,
    system: SparseSymMatrix<T>,
    solver: Solver<T>,
}

impl<T: Real> RegularizedForwardOperator<T> {
    pub fn new(asm: Arc<Assembler<T>>, a: &[T], settings: ForwardSettings<T>) -> Result<Self> {
        if settings.eps < T::zero() {
            return Err(Error::invalid("regularization weight eps must be >= 0"));
        }
        if a.iter().any(|&v| v < T::zero()) {
            return Err(Error::invalid("coefficient must be nonnegative"));
        }
        let kt = asm.perturbed_stiffness(a, settings.tau)?;
        let shift = match settings.form {
            StateForm::PureNeumann => settings.eps,
            StateForm::Coercive => T::one() + settings.eps,
        };
        let system = if shift == T::zero() {
            kt
        } else {
            kt.add_scaled(shift, asm.s_matrix())?
        };
        let solver = match settings.solver {
            SolverKind::Cholesky => {
                // K(A) 1 = 0 holds element by element, so the row sums of
                // the system come from the mass-type terms alone
                let ones = vec![T::one(); asm.dim()];
                let mut sums = linalg::scaled(shift, &asm.mass().mul_vec(&ones)?);
                if settings.tau != T::zero() {
                    linalg::axpy(settings.tau, &asm.weighted_mass(a)?.mul_vec(&ones)?, &mut sums);
                }
                Solver::Cholesky(BandedCholesky::factor_with_row_sums(&system, settings.pivot_tol, &sums)?)
            }
            SolverKind::ConjugateGradient => Solver::Cg {
                inv_diag: system.diagonal().iter().map(|&d| T::one() / d).collect(),
                opts: CgOptions {
                    rel_tol: settings.solver_tol,
                    max_iters: 20 * system.dim() + 100,
                },
            },
        };
        Ok(Self {
            asm,
            a: a.to_vec(),
            settings,
            system,
            solver,
        })
    }

    pub fn assembler(&self) -> &Arc<Assembler<T>> {
        &self.asm
    }

    pub fn coefficient(&self) -> &[T] {
        &self.a
    }

    pub fn settings(&self) -> &ForwardSettings<T> {
        &self.settings
    }

    pub fn eps(&self) -> T {
        self.settings.eps
    }

    pub fn tau(&self) -> T {
        self.settings.tau
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// The assembled system matrix.
    pub fn system(&self) -> &SparseSymMatrix<T> {
        &self.system
    }

    /// Largest over smallest Cholesky pivot (`None` for the CG solver).
    pub fn condition_estimate(&self) -> Option<T> {
        match &self.solver {
            Solver::Cholesky(f) => Some(f.condition_estimate()),
            Solver::Cg { .. } => None,
        }
    }

    pub fn near_singular(&self) -> bool {
        self.condition_estimate()
            .is_some_and(|c| c.as_f64() > NEAR_SINGULAR_CONDITION)
    }

    /// Gram matrix of the data inner product.
    pub fn data_gram(&self) -> &SparseSymMatrix<T> {
        match self.settings.data_norm {
            DataNorm::L2 => self.asm.mass(),
            DataNorm::H1 => self.asm.s_matrix(),
        }
    }

    /// Solves the system for an arbitrary right-hand side.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        Error::check_len("forward solve", self.dim(), rhs.len())?;
        match &self.solver {
            Solver::Cholesky(f) => {
                let mut x = rhs.to_vec();
                f.solve_in_place(&mut x);
                Ok(x)
            }
            Solver::Cg { inv_diag, opts } => {
                let mut x = vec![T::zero(); rhs.len()];
                linalg::pcg(|v, out| self.system.matvec_into(v, out), Some(inv_diag), rhs, &mut x, *opts)?;
                Ok(x)
            }
        }
    }

    /// State `V` with `[K_tau(A) + eps W] V = P`.
    pub fn solve_state(&self, load: &[T]) -> Result<Vec<T>> {
        self.solve(load)
    }

    /// `dV` with `[K_tau(A) + eps W] dV = -L(V) dA`.
    pub fn solve_sensitivity(&self, state: &[T], da: &[T]) -> Result<Vec<T>> {
        let rhs = self.asm.apply_l(state, da, self.settings.tau)?;
        Ok(linalg::scaled(-T::one(), &self.solve(&rhs)?))
    }

    /// `d2V` with `[K_tau(A) + eps W] d2V = -K_tau(dA2) dV1 - K_tau(dA1) dV2`.
    pub fn solve_second_sensitivity(
        &self,
        da1: &[T],
        da2: &[T],
        dv1: &[T],
        dv2: &[T],
    ) -> Result<Vec<T>> {
        let tau = self.settings.tau;
        let r = linalg::add(&self.asm.apply_l(dv1, da2, tau)?, &self.asm.apply_l(dv2, da1, tau)?);
        Ok(linalg::scaled(-T::one(), &self.solve(&r)?))
    }

    /// Adjoint state `w` with `[K_tau(A) + eps W] w = G (Z - V)`, `G` the data
    /// Gram matrix.
    pub fn solve_adjoint(&self, state: &[T], data: &[T]) -> Result<Vec<T>> {
        Error::check_len("adjoint data", self.dim(), data.len())?;
        let rhs = self.data_gram().mul_vec(&linalg::sub(data, state))?;
        self.solve(&rhs)
    }
}

/// Solution of the unregularized limit problem `T(a, u, v) = P(v)`.
///
/// For the pure-Neumann form this is the mean-zero solution: the load is
/// first made compatible (`P - (1^T P) M 1 / |Omega|`, the Lagrange
/// multiplier of the constraint `int u = 0`), one node is pinned to remove
/// the constant kernel, and the result is shifted to zero mean.
pub fn limit_solution<T: Real>(asm: &Assembler<T>, a: &[T], load: &[T], form: StateForm) -> Result<Vec<T>> {
    Error::check_len("limit load", asm.dim(), load.len())?;
    let k = asm.stiffness(a)?;
    match form {
        StateForm::Coercive => {
            let sys = k.add_scaled(T::one(), asm.s_matrix())?;
            let f = BandedCholesky::factor(&sys, T::epsilon())?;
            let mut x = load.to_vec();
            f.solve_in_place(&mut x);
            Ok(x)
        }
        StateForm::PureNeumann => {
            let ones = vec![T::one(); asm.dim()];
            let m1 = asm.mass().mul_vec(&ones)?;
            let area: T = m1.iter().copied().sum();
            let defect: T = load.iter().copied().sum();
            let mut rhs = load.to_vec();
            linalg::axpy(-defect / area, &m1, &mut rhs);
            let pinned = pin_first_dof(&k);
            rhs[0] = T::zero();
            let f = BandedCholesky::factor(&pinned, T::epsilon())?;
            f.solve_in_place(&mut rhs);
            Ok(project_mean_zero(asm, &rhs))
        }
    }
}

fn pin_first_dof<T: Real>(k: &SparseSymMatrix<T>) -> SparseSymMatrix<T> {
    k.map_entries(|i, j, v| match (i == 0 || j == 0, i == j) {
        (false, _) => v,
        (true, true) => T::one(),
        (true, false) => T::zero(),
    })
}

/// `u - (int u / |Omega|) 1`.
pub fn project_mean_zero<T: Real>(asm: &Assembler<T>, u: &[T]) -> Vec<T> {
    let ones = vec![T::one(); u.len()];
    let m1 = asm.mass().mul_vec(&ones).expect("dimension");
    let area: T = m1.iter().copied().sum();
    let mean = linalg::dot(&m1, u) / area;
    u.iter().map(|&x| x - mean).collect()
}

/// Functional version of the mean-zero projection:
/// `r - (1^T r) M 1 / |Omega|`, so that the result annihilates constants.
pub fn project_functional<T: Real>(asm: &Assembler<T>, r: &[T]) -> Vec<T> {
    let ones = vec![T::one(); r.len()];
    let m1 = asm.mass().mul_vec(&ones).expect("dimension");
    let area: T = m1.iter().copied().sum();
    let s: T = r.iter().copied().sum();
    let mut out = r.to_vec();
    linalg::axpy(-s / area, &m1, &mut out);
    out
}

/// One row `(eps, tau, nu, delta, kappa)` of a regularization schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry<T> {
    pub eps: T,
    pub tau: T,
    pub nu: T,
    pub delta: T,
    pub kappa: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationSchedule<T> {
    entries: Vec<ScheduleEntry<T>>,
}

impl<T: Real> RegularizationSchedule<T> {
    /// Checks signs and that every level and every ratio `tau/eps`,
    /// `delta/eps`, `nu/eps` is non-increasing. A single entry may have
    /// `eps = 0` (the unregularized problem, which is expected to fail).
    pub fn new(entries: Vec<ScheduleEntry<T>>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("schedule needs at least one entry"));
        }
        for e in &entries {
            if !(e.eps >= T::zero()) || !(e.kappa >= T::zero()) {
                return Err(Error::invalid("schedule needs eps >= 0 and kappa >= 0"));
            }
            if e.tau < T::zero() || e.nu < T::zero() || e.delta < T::zero() {
                return Err(Error::invalid("schedule needs tau, nu, delta >= 0"));
            }
        }
        for w in entries.windows(2) {
            let (p, q) = (&w[0], &w[1]);
            let mut pairs = vec![
                (q.eps, p.eps),
                (q.tau, p.tau),
                (q.nu, p.nu),
                (q.delta, p.delta),
                (q.kappa, p.kappa),
            ];
            if q.eps > T::zero() {
                pairs.extend([
                    (q.tau / q.eps, p.tau / p.eps),
                    (q.nu / q.eps, p.nu / p.eps),
                    (q.delta / q.eps, p.delta / p.eps),
                ]);
            }
            let non_increasing = pairs
                .iter()
                .all(|&(later, earlier)| later <= earlier * (T::one() + T::lit(1e-12)));
            if !non_increasing || !(q.eps < p.eps) {
                return Err(Error::invalid("schedule levels and ratios must decrease"));
            }
        }
        Ok(Self { entries })
    }

    /// One fixed level.
    pub fn single(entry: ScheduleEntry<T>) -> Result<Self> {
        Self::new(vec![entry])
    }

    /// `eps_n = eps0 rho^n`, `tau_n = eps_n^2`, `nu_n = delta_n = eps_n^{3/2}`,
    /// `kappa_n = eps_n` with `eps0 = 0.1`, `rho = 1/2`.
    pub fn default_geometric(len: usize) -> Result<Self> {
        Self::geometric(len, T::lit(0.1), T::lit(0.5), T::lit(2.0), T::lit(1.5), T::lit(1.5), T::one())
    }

    /// `eps_n = eps0 rho^n` and `x_n = eps_n^p_x` for the other levels.
    pub fn geometric(len: usize, eps0: T, rho: T, p_tau: T, p_nu: T, p_delta: T, p_kappa: T) -> Result<Self> {
        let mut entries = Vec::with_capacity(len);
        let mut eps = eps0;
        for _ in 0..len {
            entries.push(ScheduleEntry {
                eps,
                tau: eps.powf(p_tau),
                nu: eps.powf(p_nu),
                delta: eps.powf(p_delta),
                kappa: eps.powf(p_kappa),
            });
            eps *= rho;
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[ScheduleEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether the ratios `tau/eps`, `delta/eps`, `nu/eps` actually shrink
    /// along the schedule (each ends at zero or below `shrink` times its
    /// first value).
    pub fn ratios_vanish(&self, shrink: T) -> bool {
        let (first, last) = (self.entries[0], self.entries[self.entries.len() - 1]);
        if !(last.eps > T::zero()) {
            return false;
        }
        [
            (first.tau / first.eps, last.tau / last.eps),
            (first.nu / first.eps, last.nu / last.eps),
            (first.delta / first.eps, last.delta / last.eps),
        ]
        .iter()
        .all(|&(a, b)| b == T::zero() || b <= shrink * a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    fn asm(n: usize) -> Arc<Assembler<f64>> {
        Arc::new(Assembler::new(Arc::new(Mesh::unit_square(n).unwrap())))
    }

    #[test]
    fn zero_load_zero_state() {
        let a = asm(4);
        let op = RegularizedForwardOperator::new(a.clone(), &vec![1.0; a.dim()], ForwardSettings::new(1e-2, 0.0)).unwrap();
        assert!(op.solve_state(&vec![0.0; a.dim()]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_reproduced() {
        let a = asm(4);
        let op = RegularizedForwardOperator::new(a.clone(), &vec![1.0; a.dim()], ForwardSettings::new(1.0, 0.0)).unwrap();
        let y = vec![0.7; a.dim()];
        let p = a.s_matrix().mul_vec(&y).unwrap();
        let v = op.solve_state(&p).unwrap();
        assert!(v.iter().all(|&x| (x - 0.7).abs() < 1e-12));
    }

    #[test]
    fn eps_zero_is_singular() {
        let a = asm(6);
        let err = RegularizedForwardOperator::new(a.clone(), &vec![1.0; a.dim()], ForwardSettings::new(0.0, 0.0))
            .unwrap_err();
        assert!(err.is_singular(), "{err}");
    }

    #[test]
    fn cg_and_cholesky_agree() {
        let a = asm(5);
        let coef: Vec<f64> = (0..a.dim()).map(|i| 1.0 + 0.3 * ((i * 7) % 5) as f64).collect();
        let p: Vec<f64> = (0..a.dim()).map(|i| ((i * 3) % 7) as f64 - 3.0).collect();
        let s = ForwardSettings::new(1e-3, 1e-6);
        let v1 = RegularizedForwardOperator::new(a.clone(), &coef, s).unwrap().solve_state(&p).unwrap();
        let v2 = RegularizedForwardOperator::new(a.clone(), &coef, s.with_solver(SolverKind::ConjugateGradient))
            .unwrap()
            .solve_state(&p)
            .unwrap();
        let scale = linalg::norm_inf(&v1);
        for (x, y) in v1.iter().zip(&v2) {
            assert!((x - y).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn schedule_validation() {
        let s = RegularizationSchedule::<f64>::default_geometric(8).unwrap();
        assert_eq!(s.len(), 8);
        assert!(s.ratios_vanish(0.5));
        let e = s.entries()[3];
        assert!((e.tau - e.eps * e.eps).abs() < 1e-18);
        let bad = vec![
            ScheduleEntry { eps: 0.1, tau: 0.0, nu: 0.0, delta: 0.0, kappa: 0.1 },
            ScheduleEntry { eps: 0.2, tau: 0.0, nu: 0.0, delta: 0.0, kappa: 0.1 },
        ];
        assert!(RegularizationSchedule::new(bad).is_err());
        let degenerate = RegularizationSchedule::<f64>::geometric(6, 0.1, 0.5, 1.0, 1.5, 1.5, 1.0).unwrap();
        assert!(!degenerate.ratios_vanish(0.5));
    }

    #[test]
    fn mean_zero_projection_idempotent() {
        let a = asm(4);
        let u: Vec<f64> = (0..a.dim()).map(|i| (i as f64).sqrt()).collect();
        let p1 = project_mean_zero(&a, &u);
        let p2 = project_mean_zero(&a, &p1);
        for (x, y) in p1.iter().zip(&p2) {
            assert!((x - y).abs() < 1e-14);
        }
        let r = project_functional(&a, &u);
        assert!(r.iter().sum::<f64>().abs() < 1e-12);
    }
}
