//! Box-constrained minimization of the regularized OLS / MOLS objectives
//! along a regularization schedule.
//!
//! Each schedule entry is solved by projected Newton (Bertsekas-style
//! active set with an Armijo search along the projection arc) or by
//! projected gradient with Barzilai-Borwein initial steps. Entry `n + 1` is
//! warm-started from the minimizer of entry `n`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{smoothed_tv, Assembler};
use crate::forward::{DataNorm, ForwardSettings, RegularizationSchedule, RegularizedForwardOperator, ScheduleEntry, StateForm};
use crate::linalg::{self, CgOptions};
use crate::noise::{self, DATA_STREAM};
use crate::objectives::{self, ObjectiveKind, ObjectiveReport, Regularizer};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    ProjectedGradient,
    #[default]
    ProjectedNewton,
}

#[derive(Debug, Clone)]
pub struct SolveOptions<T> {
    pub objective: ObjectiveKind,
    pub method: Method,
    pub max_iters: usize,
    /// stop once the projected gradient norm drops below `grad_tol` times
    /// its value at the start of the entry
    pub grad_tol: T,
    pub armijo_c1: T,
    pub backtrack: T,
    pub schedule: RegularizationSchedule<T>,
    pub warm_start: bool,
    pub bounds: (T, T),
    /// `(c3, beta)`: monitored smoothed-TV cap
    pub tv_cap: Option<(T, T)>,
    /// Newton systems with at most this many free unknowns use a dense
    /// Hessian; larger ones use Hessian-action conjugate gradients
    pub dense_limit: usize,
}

impl<T: Real> SolveOptions<T> {
    pub fn new(objective: ObjectiveKind, schedule: RegularizationSchedule<T>) -> Self {
        Self {
            objective,
            method: Method::ProjectedNewton,
            max_iters: 500,
            grad_tol: T::lit(1e-8),
            armijo_c1: T::lit(1e-4),
            backtrack: T::lit(0.5),
            schedule,
            warm_start: true,
            bounds: (T::lit(0.1), T::lit(10.0)),
            tv_cap: None,
            dense_limit: 1681,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > T::zero()) || self.max_iters == 0 {
            return Err(Error::invalid("grad_tol and max_iters must be positive"));
        }
        if !(self.armijo_c1 > T::zero() && self.armijo_c1 < T::one()) {
            return Err(Error::invalid("Armijo c1 must lie in (0, 1)"));
        }
        if !(self.backtrack > T::zero() && self.backtrack < T::one()) {
            return Err(Error::invalid("backtracking factor must lie in (0, 1)"));
        }
        if !(self.bounds.0 > T::zero() && self.bounds.0 < self.bounds.1) {
            return Err(Error::invalid("box needs 0 < c1 < c2"));
        }
        Ok(())
    }

    /// Midpoint of the box, used as the default start.
    pub fn midpoint(&self) -> T {
        (self.bounds.0 + self.bounds.1) / T::lit(2.0)
    }
}

/// True coefficient and state used for the error columns.
#[derive(Debug, Clone)]
pub struct Reference<T> {
    pub coefficient: Vec<T>,
    pub state: Vec<T>,
}

/// Everything that defines the objective apart from the schedule.
#[derive(Debug, Clone)]
pub struct ReconstructionProblem<T> {
    pub asm: Arc<Assembler<T>>,
    /// `int f phi_i + int g phi_i`
    pub base_load: Vec<T>,
    /// direction of the functional perturbation, scaled by `nu_n`
    pub functional_direction: Option<Vec<T>>,
    /// `z` in the steering term `eps <z, v>_V`; `None` means `ell = 0`
    pub steering: Option<Vec<T>>,
    /// clean data, perturbed by `delta_n` per entry
    pub data: Vec<T>,
    pub noise_seed: u64,
    pub form: StateForm,
    pub data_norm: DataNorm,
    /// kind of `R`; its weight is replaced by `kappa_n`
    pub regularizer: Regularizer<T>,
    pub reference: Option<Reference<T>>,
}

impl<T: Real> ReconstructionProblem<T> {
    pub fn settings(&self, e: &ScheduleEntry<T>) -> ForwardSettings<T> {
        ForwardSettings::new(e.eps, e.tau)
            .with_form(self.form)
            .with_data_norm(self.data_norm)
    }

    pub fn load(&self, e: &ScheduleEntry<T>) -> Result<Vec<T>> {
        let mut p = self.base_load.clone();
        if let Some(dir) = &self.functional_direction {
            p = noise::perturb_functional(&p, e.nu, dir)?;
        }
        if let Some(z) = &self.steering {
            linalg::axpy(e.eps, &self.asm.s_matrix().mul_vec(z)?, &mut p);
        }
        Ok(p)
    }

    pub fn noisy_data(&self, e: &ScheduleEntry<T>) -> Vec<T> {
        noise::perturb_data(&self.data, e.delta, self.noise_seed, DATA_STREAM)
    }

    pub fn regularizer(&self, e: &ScheduleEntry<T>) -> Regularizer<T> {
        self.regularizer.with_weight(e.kappa)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// no Armijo step found; usually rounding-level stagnation
    LineSearchFailed,
    /// the forward system could not be factorized
    SingularSystem {
        row: usize,
        pivot: f64,
        condition_estimate: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord<T> {
    pub entry: usize,
    pub iteration: usize,
    pub objective: T,
    pub projected_gradient: T,
    pub step: T,
    pub newton: bool,
}

/// Relative errors `||x - x_ref|| / ||x_ref||` in the discrete L2 and max norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeErrors<T> {
    pub l2_a: T,
    pub linf_a: T,
    pub l2_u: T,
    pub linf_u: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryRecord<T> {
    pub entry: ScheduleEntry<T>,
    pub iterations: usize,
    pub objective: T,
    pub projected_gradient: T,
    pub termination: Termination,
    /// `||A*(n) - A*(n-1)||_inf` (zero for the first entry)
    pub change: T,
    pub errors: Option<RelativeErrors<T>>,
    pub tv_within_cap: Option<bool>,
    pub condition_estimate: Option<T>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult<T> {
    pub coefficient: Vec<T>,
    pub state: Vec<T>,
    pub log: Vec<IterationRecord<T>>,
    pub entries: Vec<EntryRecord<T>>,
    pub termination: Termination,
}

impl<T: Real> ReconstructionResult<T> {
    pub fn succeeded(&self) -> bool {
        !matches!(
            self.termination,
            Termination::SingularSystem { .. }
        )
    }

    pub fn total_iterations(&self) -> usize {
        self.entries.iter().map(|e| e.iterations).sum()
    }

    pub fn final_errors(&self) -> Option<RelativeErrors<T>> {
        self.entries.last().and_then(|e| e.errors)
    }
}

/// Componentwise clamp to `[c1, c2]`.
pub fn project_box<T: Real>(a: &[T], c1: T, c2: T) -> Result<Vec<T>> {
    if !(c1 < c2) {
        return Err(Error::invalid("projection needs c1 < c2"));
    }
    Ok(a.iter().map(|&x| x.max(c1).min(c2)).collect())
}

fn clamp<T: Real>(a: &mut [T], (c1, c2): (T, T)) {
    a.iter_mut().for_each(|x| *x = x.max(c1).min(c2));
}

/// `a - P(a - g)`.
fn projected_gradient<T: Real>(a: &[T], g: &[T], bounds: (T, T)) -> Vec<T> {
    a.iter()
        .zip(g)
        .map(|(&x, &gi)| x - (x - gi).max(bounds.0).min(bounds.1))
        .collect()
}

pub fn relative_errors<T: Real>(asm: &Assembler<T>, a: &[T], u: &[T], reference: &Reference<T>) -> RelativeErrors<T> {
    let rel = |x: &[T], r: &[T]| {
        let d = linalg::sub(x, r);
        (asm.l2_norm(&d) / asm.l2_norm(r), linalg::norm_inf(&d) / linalg::norm_inf(r))
    };
    let (l2_a, linf_a) = rel(a, &reference.coefficient);
    let (l2_u, linf_u) = rel(u, &reference.state);
    RelativeErrors { l2_a, linf_a, l2_u, linf_u }
}

struct Evaluator<'a, T: Real> {
    problem: &'a ReconstructionProblem<T>,
    kind: ObjectiveKind,
    settings: ForwardSettings<T>,
    load: Vec<T>,
    data: Vec<T>,
    reg: Regularizer<T>,
}

struct Point<T: Real> {
    a: Vec<T>,
    op: RegularizedForwardOperator<T>,
    report: ObjectiveReport<T>,
}

impl<T: Real> Evaluator<'_, T> {
    fn at(&self, a: Vec<T>) -> Result<Point<T>> {
        let op = RegularizedForwardOperator::new(Arc::clone(&self.problem.asm), &a, self.settings)?;
        let report = objectives::evaluate(self.kind, &op, &self.load, &self.data, &self.reg)?;
        Ok(Point { a, op, report })
    }

    fn hess(&self, p: &Point<T>, d: &[T]) -> Result<Vec<T>> {
        objectives::hessian_action(&p.op, &p.report, &self.reg, d)
    }
}

/// Runs [`minimize_with`] without an iteration observer.
pub fn minimize<T: Real>(
    problem: &ReconstructionProblem<T>,
    start: &[T],
    opts: &SolveOptions<T>,
) -> Result<ReconstructionResult<T>> {
    minimize_with(problem, start, opts, |_| {})
}

/// Minimizes the entry objectives in schedule order. A forward system that
/// cannot be factorized ends the run with [`Termination::SingularSystem`]
/// instead of an error; other failures are returned as errors.
pub fn minimize_with<T: Real>(
    problem: &ReconstructionProblem<T>,
    start: &[T],
    opts: &SolveOptions<T>,
    mut observer: impl FnMut(&IterationRecord<T>),
) -> Result<ReconstructionResult<T>> {
    opts.validate()?;
    Error::check_len("optimizer start", problem.asm.dim(), start.len())?;
    let mut a = project_box(start, opts.bounds.0, opts.bounds.1)?;
    let mut state = Vec::new();
    let mut log = Vec::new();
    let mut entries = Vec::new();
    let mut termination = Termination::Converged;
    for (k, e) in opts.schedule.entries().iter().enumerate() {
        let ev = Evaluator {
            problem,
            kind: opts.objective,
            settings: problem.settings(e),
            load: problem.load(e)?,
            data: problem.noisy_data(e),
            reg: problem.regularizer(e),
        };
        let a0 = if opts.warm_start || k == 0 {
            a.clone()
        } else {
            project_box(start, opts.bounds.0, opts.bounds.1)?
        };
        let outcome = match solve_entry(&ev, a0, opts, k, &mut |r| {
            observer(r);
            log.push(*r);
        }) {
            Ok(o) => o,
            Err(Error::SingularSystem {
                row,
                pivot,
                condition_estimate,
            }) => {
                termination = Termination::SingularSystem {
                    row,
                    pivot,
                    condition_estimate,
                };
                entries.push(EntryRecord {
                    entry: *e,
                    iterations: 0,
                    objective: T::nan(),
                    projected_gradient: T::nan(),
                    termination: termination.clone(),
                    change: T::zero(),
                    errors: None,
                    tv_within_cap: None,
                    condition_estimate: Some(T::lit(condition_estimate)),
                });
                break;
            }
            Err(other) => return Err(other),
        };
        let change = if k == 0 {
            T::zero()
        } else {
            linalg::norm_inf(&linalg::sub(&outcome.point.a, &a))
        };
        a = outcome.point.a;
        state = outcome.point.report.state;
        let errors = problem
            .reference
            .as_ref()
            .map(|r| relative_errors(&problem.asm, &a, &state, r));
        let tv_within_cap = opts
            .tv_cap
            .map(|(c3, beta)| smoothed_tv(problem.asm.mesh(), &a, beta) <= c3);
        termination = outcome.termination.clone();
        entries.push(EntryRecord {
            entry: *e,
            iterations: outcome.iterations,
            objective: outcome.point.report.value,
            projected_gradient: outcome.pg_norm,
            termination: outcome.termination,
            change,
            errors,
            tv_within_cap,
            condition_estimate: outcome.point.op.condition_estimate(),
        });
    }
    Ok(ReconstructionResult {
        coefficient: a,
        state,
        log,
        entries,
        termination,
    })
}

struct EntryOutcome<T: Real> {
    point: Point<T>,
    iterations: usize,
    pg_norm: T,
    termination: Termination,
}

fn solve_entry<T: Real>(
    ev: &Evaluator<'_, T>,
    a0: Vec<T>,
    opts: &SolveOptions<T>,
    entry: usize,
    record: &mut dyn FnMut(&IterationRecord<T>),
) -> Result<EntryOutcome<T>> {
    let bounds = opts.bounds;
    let mut p = ev.at(a0)?;
    let mut pg_norm = linalg::norm2(&projected_gradient(&p.a, &p.report.gradient, bounds));
    let target = opts.grad_tol * pg_norm;
    record(&IterationRecord {
        entry,
        iteration: 0,
        objective: p.report.value,
        projected_gradient: pg_norm,
        step: T::zero(),
        newton: false,
    });
    // previous iterate and gradient for Barzilai-Borwein steps
    let mut prev: Option<(Vec<T>, Vec<T>)> = None;
    for it in 1..=opts.max_iters {
        if pg_norm <= target || pg_norm == T::zero() {
            return Ok(EntryOutcome {
                point: p,
                iterations: it - 1,
                pg_norm,
                termination: Termination::Converged,
            });
        }
        let g = p.report.gradient.clone();
        let (dir, newton) = match opts.method {
            Method::ProjectedNewton => match newton_direction(ev, &p, bounds, pg_norm, opts.dense_limit)? {
                Some(d) => (d, true),
                None => (linalg::scaled(-T::one() / linalg::norm_inf(&g), &g), false),
            },
            Method::ProjectedGradient => {
                let scale = match &prev {
                    Some((a_old, g_old)) => {
                        let s = linalg::sub(&p.a, a_old);
                        let y = linalg::sub(&g, g_old);
                        let sy = linalg::dot(&s, &y);
                        if sy > T::zero() {
                            linalg::dot(&s, &s) / sy
                        } else {
                            T::one() / linalg::norm_inf(&g)
                        }
                    }
                    None => T::one() / linalg::norm_inf(&g),
                };
                (linalg::scaled(-scale, &g), false)
            }
        };
        let Some((next, step)) = armijo(ev, &p, &dir, opts)? else {
            if newton {
                // retry once along the steepest-descent arc
                let sd = linalg::scaled(-T::one() / linalg::norm_inf(&g), &g);
                if let Some((next, step)) = armijo(ev, &p, &sd, opts)? {
                    prev = Some((p.a.clone(), g));
                    p = next;
                    pg_norm = linalg::norm2(&projected_gradient(&p.a, &p.report.gradient, bounds));
                    record(&IterationRecord {
                        entry,
                        iteration: it,
                        objective: p.report.value,
                        projected_gradient: pg_norm,
                        step,
                        newton: false,
                    });
                    continue;
                }
            }
            return Ok(EntryOutcome {
                point: p,
                iterations: it - 1,
                pg_norm,
                termination: Termination::LineSearchFailed,
            });
        };
        prev = Some((p.a.clone(), g));
        p = next;
        pg_norm = linalg::norm2(&projected_gradient(&p.a, &p.report.gradient, bounds));
        record(&IterationRecord {
            entry,
            iteration: it,
            objective: p.report.value,
            projected_gradient: pg_norm,
            step,
            newton,
        });
    }
    let termination = if pg_norm <= target {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    Ok(EntryOutcome {
        point: p,
        iterations: opts.max_iters,
        pg_norm,
        termination,
    })
}

/// Armijo search along the projection arc `P(a + alpha d)`.
fn armijo<T: Real>(
    ev: &Evaluator<'_, T>,
    p: &Point<T>,
    dir: &[T],
    opts: &SolveOptions<T>,
) -> Result<Option<(Point<T>, T)>> {
    let g = &p.report.gradient;
    let mut alpha = T::one();
    for _ in 0..50 {
        let mut trial: Vec<T> = p.a.iter().zip(dir).map(|(&x, &d)| x + alpha * d).collect();
        clamp(&mut trial, opts.bounds);
        let s = linalg::sub(&trial, &p.a);
        let decrease = linalg::dot(g, &s);
        if !(decrease < T::zero()) {
            if linalg::norm_inf(&s) == T::zero() {
                return Ok(None);
            }
            alpha *= opts.backtrack;
            continue;
        }
        let q = ev.at(trial)?;
        if q.report.value <= p.report.value + opts.armijo_c1 * decrease {
            return Ok(Some((q, alpha)));
        }
        alpha *= opts.backtrack;
    }
    Ok(None)
}

/// Reduced Newton direction on the free variables; active variables move
/// along the negative gradient. Returns `None` when no descent direction
/// was produced.
fn newton_direction<T: Real>(
    ev: &Evaluator<'_, T>,
    p: &Point<T>,
    (c1, c2): (T, T),
    pg_norm: T,
    dense_limit: usize,
) -> Result<Option<Vec<T>>> {
    let g = &p.report.gradient;
    let m = g.len();
    let width = pg_norm.min(T::lit(1e-3) * (c2 - c1));
    let free: Vec<usize> = (0..m)
        .filter(|&i| {
            let lower = p.a[i] <= c1 + width && g[i] > T::zero();
            let upper = p.a[i] >= c2 - width && g[i] < T::zero();
            !(lower || upper)
        })
        .collect();
    let mut dir = linalg::scaled(-T::one(), g);
    if free.is_empty() {
        return Ok(Some(dir));
    }
    let nf = free.len();
    let gf: Vec<T> = free.iter().map(|&i| g[i]).collect();
    let reduced = |x: &[T]| -> Result<Vec<T>> {
        let mut full = vec![T::zero(); m];
        for (k, &i) in free.iter().enumerate() {
            full[i] = x[k];
        }
        let h = ev.hess(p, &full)?;
        Ok(free.iter().map(|&i| h[i]).collect())
    };
    let rhs = linalg::scaled(-T::one(), &gf);
    let df = if nf <= dense_limit {
        dense_newton(nf, &reduced, &rhs)?
    } else {
        cg_newton(nf, &reduced, &rhs, linalg::norm2(&gf))?
    };
    let Some(df) = df else { return Ok(None) };
    if !(linalg::dot(&df, &gf) < T::zero()) {
        return Ok(None);
    }
    for (k, &i) in free.iter().enumerate() {
        dir[i] = df[k];
    }
    Ok(Some(dir))
}

fn dense_newton<T, F>(nf: usize, reduced: &F, rhs: &[T]) -> Result<Option<Vec<T>>>
where
    T: Real,
    F: Fn(&[T]) -> Result<Vec<T>> + Sync,
{
    let mut h = objectives::dense_from_action(nf, reduced)?;
    // symmetrize away rounding asymmetry
    for i in 0..nf {
        for j in 0..i {
            let s = T::lit(0.5) * (h[i * nf + j] + h[j * nf + i]);
            h[i * nf + j] = s;
            h[j * nf + i] = s;
        }
    }
    let scale = (0..nf).fold(T::zero(), |s, i| s.max(h[i * nf + i].abs()));
    let mut shift = T::zero();
    for _ in 0..8 {
        let mut hs = h.clone();
        for i in 0..nf {
            hs[i * nf + i] += shift;
        }
        if let Some(l) = linalg::dense_cholesky(&hs, nf) {
            let mut x = rhs.to_vec();
            linalg::dense_cholesky_solve(&l, nf, &mut x);
            return Ok(Some(x));
        }
        let lmin = if shift == T::zero() {
            let apply = |x: &[T], y: &mut [T]| {
                for i in 0..nf {
                    y[i] = (0..nf).map(|j| h[i * nf + j] * x[j]).sum();
                }
            };
            linalg::lanczos_extremes(apply, nf, nf.min(80)).0
        } else {
            -T::lit(10.0) * shift
        };
        shift = (-lmin).max(T::zero()) + T::lit(1e-8) * scale.max(T::min_positive_value());
    }
    Ok(None)
}

/// Truncated conjugate gradients on the reduced Hessian. Negative curvature
/// stops the iteration at the current iterate; if it shows up in the very
/// first step, the Hessian is shifted by a Lanczos estimate of its smallest
/// eigenvalue and the solve is restarted once.
fn cg_newton<T, F>(nf: usize, reduced: &F, rhs: &[T], gnorm: T) -> Result<Option<Vec<T>>>
where
    T: Real,
    F: Fn(&[T]) -> Result<Vec<T>> + Sync,
{
    let tol = T::lit(0.5).min(gnorm.sqrt()).max(T::lit(1e-6));
    let opts = CgOptions {
        rel_tol: tol,
        max_iters: 400,
    };
    let mut shift = T::zero();
    for attempt in 0..2 {
        let failed = std::cell::Cell::new(None);
        let apply = |x: &[T], y: &mut [T]| match reduced(x) {
            Ok(h) => y.iter_mut().zip(h.iter().zip(x)).for_each(|(yi, (&hi, &xi))| *yi = hi + shift * xi),
            Err(e) => {
                y.iter_mut().for_each(|v| *v = T::zero());
                failed.set(Some(e.to_string()));
            }
        };
        let mut x = vec![T::zero(); nf];
        let out = linalg::pcg(apply, None, rhs, &mut x, opts);
        if let Some(msg) = failed.take() {
            return Err(Error::invalid(format!("Hessian action failed: {msg}")));
        }
        match out {
            Ok(_) | Err(Error::NoConvergence { .. }) => return Ok(Some(x)),
            // negative curvature after some progress: the partial CG
            // iterate is already a descent direction (truncated Newton)
            Err(e) if e.is_singular() && linalg::norm_inf(&x) > T::zero() => return Ok(Some(x)),
            Err(e) if e.is_singular() && attempt == 0 => {
                let apply = |x: &[T], y: &mut [T]| {
                    if let Ok(h) = reduced(x) {
                        y.copy_from_slice(&h);
                    }
                };
                let (lmin, lmax) = linalg::lanczos_extremes(apply, nf, nf.min(40));
                shift = (-lmin).max(T::zero()) + T::lit(1e-8) * lmax.abs().max(T::min_positive_value());
            }
            Err(e) if e.is_singular() => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// Sampled `(OCb)`-type VI residual at the final coefficient of an OLS run.
pub fn ols_optimality_check<T: Real>(
    problem: &ReconstructionProblem<T>,
    result: &ReconstructionResult<T>,
    entry: &ScheduleEntry<T>,
    bounds: (T, T),
    seed: u64,
) -> Result<T> {
    optimality_check(problem, &result.coefficient, entry, bounds, seed, ObjectiveKind::Ols)
}

/// Sampled VI residual of the chosen objective at coefficient `a`.
pub fn optimality_check<T: Real>(
    problem: &ReconstructionProblem<T>,
    a: &[T],
    entry: &ScheduleEntry<T>,
    bounds: (T, T),
    seed: u64,
    kind: ObjectiveKind,
) -> Result<T> {
    let op = RegularizedForwardOperator::new(Arc::clone(&problem.asm), a, problem.settings(entry))?;
    let v = op.solve_state(&problem.load(entry)?)?;
    let z = problem.noisy_data(entry);
    let reg = problem.regularizer(entry);
    match kind {
        ObjectiveKind::Ols => objectives::ols_optimality_residual(&op, &v, &z, &reg, bounds, seed),
        ObjectiveKind::Mols => objectives::mols_optimality_residual(&op, &v, &z, &reg, bounds, seed),
    }
}

/// Runs one [`minimize`] per start in parallel.
pub fn multi_start<T: Real>(
    problem: &ReconstructionProblem<T>,
    starts: &[Vec<T>],
    opts: &SolveOptions<T>,
) -> Result<Vec<ReconstructionResult<T>>> {
    starts.par_iter().map(|s| minimize(problem, s, opts)).collect()
}
