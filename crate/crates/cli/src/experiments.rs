//! The experiments behind each subcommand.

use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use coeffid::assembly::{Assembler, Steering};
use coeffid::forward::{ForwardSettings, RegularizationSchedule, RegularizedForwardOperator, ScheduleEntry};
use coeffid::linalg;
use coeffid::manufactured::ManufacturedProblem;
use coeffid::mesh::{Mesh, P1Space, SpaceRole};
use coeffid::noise::{self, FUNCTIONAL_STREAM};
use coeffid::objectives::{self, ObjectiveKind, Regularizer};
use coeffid::optimizer::{self, ReconstructionProblem, Reference, RelativeErrors, SolveOptions, Termination};
use coeffid::setvalued::{boundedness_report, BoundednessReport, ContingentProbe, ProbeRecord};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::output::{emit_field, Cell, Table};

/// Mesh, load and exact fields of the manufactured problem at one size.
pub struct Setup {
    pub n: usize,
    pub asm: Arc<Assembler<f64>>,
    /// `int f phi_i + int g phi_i`
    pub base_load: Vec<f64>,
    /// interpolant of the true coefficient
    pub a_true: Vec<f64>,
    /// interpolant of the true state (also the clean data `z`)
    pub u_interp: Vec<f64>,
}

impl Setup {
    pub fn new(n: usize) -> Result<Self> {
        let mesh = Arc::new(Mesh::unit_square(n)?);
        let asm = Arc::new(Assembler::new(Arc::clone(&mesh)));
        let problem = ManufacturedProblem::<f64>::new();
        let base_load = problem.with_load_data(|d| asm.load(d, None, Steering::Zero, 0.0))?;
        let space = P1Space::new(mesh, SpaceRole::Parameter);
        let a_true = space.interpolate(|x, y| problem.coefficient(x, y));
        let u_interp = space.interpolate(|x, y| problem.state(x, y));
        Ok(Self {
            n,
            asm,
            base_load,
            a_true,
            u_interp,
        })
    }

    pub fn h(&self) -> f64 {
        self.asm.mesh().h()
    }

    /// Discrete regularized state at the true coefficient.
    pub fn reference_state(&self, settings: ForwardSettings<f64>, load: &[f64]) -> Result<Vec<f64>> {
        let op = RegularizedForwardOperator::new(Arc::clone(&self.asm), &self.a_true, settings)?;
        Ok(op.solve_state(load)?)
    }

    fn grid(&self) -> (usize, usize) {
        (self.n + 1, self.n + 1)
    }
}

/// Outcome of one reconstruction (one table row).
#[derive(Debug, Clone)]
pub struct TableRow {
    pub n: usize,
    pub h: f64,
    pub delta: f64,
    pub objective: ObjectiveKind,
    /// errors against the interpolated coefficient and the discrete
    /// regularized state at the true coefficient
    pub errors: Option<RelativeErrors<f64>>,
    /// state errors against the interpolant of the exact state
    pub u_interp_errors: Option<(f64, f64)>,
    /// state misfit against the (noisy) data
    pub u_data_errors: Option<(f64, f64)>,
    pub iterations: usize,
    pub termination: Termination,
    pub wall_seconds: f64,
    pub coefficient: Vec<f64>,
    pub state: Vec<f64>,
    pub data: Vec<f64>,
}

impl TableRow {
    pub fn status(&self) -> &'static str {
        match self.termination {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailed => "line_search_stalled",
            Termination::SingularSystem { .. } => "singular_system",
        }
    }
}

fn entry(cfg: &ExperimentConfig, delta: f64) -> ScheduleEntry<f64> {
    ScheduleEntry {
        eps: cfg.eps,
        tau: cfg.tau,
        nu: cfg.nu,
        delta,
        kappa: cfg.kappa,
    }
}

/// Builds the reconstruction problem for the manufactured data at one size.
pub fn reconstruction_problem(cfg: &ExperimentConfig, setup: &Setup, e: &ScheduleEntry<f64>) -> Result<ReconstructionProblem<f64>> {
    let functional_direction = if cfg.nu > 0.0 {
        Some(noise::functional_direction(&setup.asm, cfg.seed, FUNCTIONAL_STREAM)?)
    } else {
        None
    };
    let mut problem = ReconstructionProblem {
        asm: Arc::clone(&setup.asm),
        base_load: setup.base_load.clone(),
        functional_direction,
        steering: cfg.steering.then(|| setup.u_interp.clone()),
        data: setup.u_interp.clone(),
        noise_seed: cfg.seed,
        form: cfg.form,
        data_norm: Default::default(),
        regularizer: Regularizer::h1(cfg.kappa),
        reference: None,
    };
    if e.eps > 0.0 {
        let u0 = setup.reference_state(problem.settings(e), &problem.load(e)?)?;
        problem.reference = Some(Reference {
            coefficient: setup.a_true.clone(),
            state: u0,
        });
    }
    Ok(problem)
}

pub fn solve_options(cfg: &ExperimentConfig, e: ScheduleEntry<f64>) -> Result<SolveOptions<f64>> {
    let mut opts = SolveOptions::new(cfg.objective, RegularizationSchedule::single(e)?);
    opts.max_iters = cfg.max_iters;
    opts.grad_tol = cfg.grad_tol;
    Ok(opts)
}

/// One reconstruction on an `n x n` grid with data noise `delta`.
pub fn run_row(cfg: &ExperimentConfig, n: usize, delta: f64) -> Result<TableRow> {
    let clock = Instant::now();
    let setup = Setup::new(n)?;
    let e = entry(cfg, delta);
    let problem = reconstruction_problem(cfg, &setup, &e)?;
    let opts = solve_options(cfg, e)?;
    let start = vec![opts.midpoint(); setup.asm.dim()];
    let result = optimizer::minimize(&problem, &start, &opts)?;
    let data = problem.noisy_data(&e);
    let rel = |u: &[f64], r: &[f64]| {
        let d = linalg::sub(u, r);
        (
            setup.asm.l2_norm(&d) / setup.asm.l2_norm(r),
            linalg::norm_inf(&d) / linalg::norm_inf(r),
        )
    };
    let ok = result.succeeded();
    Ok(TableRow {
        n,
        h: setup.h(),
        delta,
        objective: cfg.objective,
        errors: result.final_errors(),
        u_interp_errors: ok.then(|| rel(&result.state, &setup.u_interp)),
        u_data_errors: ok.then(|| rel(&result.state, &data)),
        iterations: result.total_iterations(),
        termination: result.termination.clone(),
        wall_seconds: clock.elapsed().as_secs_f64(),
        coefficient: result.coefficient,
        state: result.state,
        data,
    })
}

/// All rows of a table experiment (sizes x noise levels), computed in
/// parallel and returned in input order.
pub fn run_table(cfg: &ExperimentConfig) -> Result<Vec<TableRow>> {
    cfg.validate()?;
    let cells: Vec<(usize, f64)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| cfg.deltas.iter().map(move |&d| (n, d)))
        .collect();
    cells
        .par_iter()
        .map(|&(n, d)| run_row(cfg, n, d).with_context(|| format!("row n={n}, delta={d}")))
        .collect()
}

pub fn table_csv(cfg: &ExperimentConfig, rows: &[TableRow]) -> Table {
    let mut t = Table::new(&[
        "h",
        "n",
        "delta",
        "rel_l2_a",
        "rel_l2_u",
        "rel_linf_a",
        "rel_linf_u",
        "rel_l2_u_interp",
        "rel_linf_u_interp",
        "rel_l2_u_data",
        "rel_linf_u_data",
        "iterations",
        "status",
        "objective",
        "kappa",
        "eps",
        "tau",
        "seed",
    ]);
    let nan = f64::NAN;
    for r in rows {
        let e = r.errors.unwrap_or(RelativeErrors {
            l2_a: nan,
            linf_a: nan,
            l2_u: nan,
            linf_u: nan,
        });
        let (ui2, uii) = r.u_interp_errors.unwrap_or((nan, nan));
        let (ud2, udi) = r.u_data_errors.unwrap_or((nan, nan));
        t.push(vec![
            Cell::Fixed(r.h),
            Cell::Int(r.n as u64),
            Cell::Real(r.delta),
            Cell::Error(e.l2_a),
            Cell::Error(e.l2_u),
            Cell::Error(e.linf_a),
            Cell::Error(e.linf_u),
            Cell::Error(ui2),
            Cell::Error(uii),
            Cell::Error(ud2),
            Cell::Error(udi),
            Cell::Int(r.iterations as u64),
            Cell::Text(r.status().into()),
            Cell::Text(objective_name(r.objective).into()),
            Cell::Real(cfg.kappa),
            Cell::Real(cfg.eps),
            Cell::Real(cfg.tau),
            Cell::Int(cfg.seed),
        ]);
    }
    t
}

pub fn objective_name(k: ObjectiveKind) -> &'static str {
    match k {
        ObjectiveKind::Ols => "ols",
        ObjectiveKind::Mols => "mols",
    }
}

/// Writes the coefficient, state and data grids of every row.
pub fn write_row_fields(cfg: &ExperimentConfig, stem: &str, rows: &[TableRow]) -> Result<()> {
    for r in rows.iter().filter(|r| !r.state.is_empty()) {
        let tag = format!("{stem}_n{}_d{:e}", r.n, r.delta);
        let (nx, ny) = (r.n + 1, r.n + 1);
        emit_field(&cfg.out.join(format!("{tag}_a.grid")), nx, ny, &r.coefficient)?;
        emit_field(&cfg.out.join(format!("{tag}_u.grid")), nx, ny, &r.state)?;
        emit_field(&cfg.out.join(format!("{tag}_z.grid")), nx, ny, &r.data)?;
    }
    Ok(())
}

/// Result of the unregularized reconstruction attempt.
#[derive(Debug, Clone)]
pub struct FailureReport {
    pub row: TableRow,
    /// condition estimate of the system at the start coefficient (when it
    /// could be factorized)
    pub start_condition: Option<f64>,
    pub near_singular: bool,
}

impl FailureReport {
    pub fn failed(&self) -> bool {
        matches!(self.row.termination, Termination::SingularSystem { .. })
    }
}

/// Reconstruction at the configured `eps` (zero by default), reporting the
/// singular-system failure as data rather than as an error.
pub fn run_failure_demo(cfg: &ExperimentConfig) -> Result<FailureReport> {
    cfg.validate()?;
    let n = cfg.sizes[0];
    let setup = Setup::new(n)?;
    let e = entry(cfg, cfg.deltas[0]);
    let settings = ForwardSettings::new(cfg.eps, cfg.tau).with_form(cfg.form);
    let a0 = vec![solve_options(cfg, e)?.midpoint(); setup.asm.dim()];
    let probe = RegularizedForwardOperator::new(Arc::clone(&setup.asm), &a0, settings);
    let (start_condition, near_singular) = match &probe {
        Ok(op) => (op.condition_estimate(), op.near_singular()),
        Err(_) => (None, true),
    };
    let row = run_row(cfg, n, cfg.deltas[0])?;
    Ok(FailureReport {
        row,
        start_condition,
        near_singular,
    })
}

pub fn failure_csv(cfg: &ExperimentConfig, r: &FailureReport) -> Table {
    let mut t = Table::new(&[
        "h",
        "n",
        "eps",
        "kappa",
        "status",
        "pivot_row",
        "pivot",
        "condition_estimate",
        "near_singular",
        "iterations",
        "rel_l2_a",
    ]);
    let (row, pivot, cond) = match r.row.termination {
        Termination::SingularSystem {
            row,
            pivot,
            condition_estimate,
        } => (row.to_string(), pivot, condition_estimate),
        _ => (String::new(), f64::NAN, r.start_condition.unwrap_or(f64::NAN)),
    };
    t.push(vec![
        Cell::Fixed(r.row.h),
        Cell::Int(r.row.n as u64),
        Cell::Real(cfg.eps),
        Cell::Real(cfg.kappa),
        Cell::Text(r.row.status().into()),
        Cell::Text(row),
        Cell::Real(pivot),
        Cell::Error(cond),
        Cell::Text(r.near_singular.to_string()),
        Cell::Int(r.row.iterations as u64),
        Cell::Error(r.row.errors.map_or(f64::NAN, |e| e.l2_a)),
    ]);
    t
}

/// First direction of the probes.
pub fn probe_direction(x: f64, y: f64) -> f64 {
    (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).cos() + 0.5 * x * y
}

/// Second direction of the probes.
pub fn probe_direction2(x: f64, y: f64) -> f64 {
    1.0 + x * x - 0.5 * y
}

pub fn probe_schedule(cfg: &ExperimentConfig) -> Result<RegularizationSchedule<f64>> {
    Ok(RegularizationSchedule::geometric(
        cfg.schedule_len,
        0.1,
        0.5,
        cfg.tau_power,
        1.5,
        1.5,
        1.0,
    )?)
}

/// Runs the derivative-limit probe at `a = 1` on the manufactured load.
pub fn run_probe(cfg: &ExperimentConfig) -> Result<(Vec<ProbeRecord<f64>>, BoundednessReport<f64>)> {
    cfg.validate()?;
    let setup = Setup::new(cfg.sizes[0])?;
    let space = P1Space::new(Arc::clone(setup.asm.mesh()), SpaceRole::Parameter);
    let mut probe = ContingentProbe::new(
        Arc::clone(&setup.asm),
        setup.a_true.clone(),
        setup.base_load.clone(),
        space.interpolate(probe_direction),
        space.interpolate(probe_direction2),
        cfg.form,
    )?
    .with_functional_noise(noise::functional_direction(&setup.asm, cfg.seed, FUNCTIONAL_STREAM)?);
    if cfg.steering {
        probe = probe.with_steering(setup.u_interp.clone());
    }
    let schedule = probe_schedule(cfg)?;
    let records = probe.run(&schedule)?;
    let report = boundedness_report(&records, &schedule);
    Ok((records, report))
}

pub fn probe_csv(records: &[ProbeRecord<f64>]) -> Table {
    let mut t = Table::new(&[
        "n",
        "eps",
        "tau",
        "residual_fcd",
        "residual_scd",
        "sens_norm",
        "state_gap",
    ]);
    for r in records {
        t.push(vec![
            Cell::Int(r.index as u64),
            Cell::Real(r.entry.eps),
            Cell::Real(r.entry.tau),
            Cell::Error(r.residual_fcd),
            Cell::Error(r.residual_scd),
            Cell::Error(r.sens_norm),
            Cell::Error(r.state_gap),
        ]);
    }
    t
}

pub fn probe_summary_csv(report: &BoundednessReport<f64>) -> Table {
    let mut t = Table::new(&[
        "sup_sensitivity",
        "median_sensitivity",
        "disc_slope",
        "fcd_slope",
        "growth",
        "schedule_violation",
        "flagged",
    ]);
    t.push(vec![
        Cell::Error(report.sup_sensitivity),
        Cell::Error(report.median_sensitivity),
        Cell::Error(report.disc_slope),
        Cell::Error(report.fcd_slope),
        Cell::Text(report.growth.to_string()),
        Cell::Text(report.schedule_violation.to_string()),
        Cell::Text(report.flagged().to_string()),
    ]);
    t
}

/// One derivative check: the smallest relative discrepancy over a sweep
/// of difference steps.
#[derive(Debug, Clone)]
pub struct DerivativeCheck {
    pub name: &'static str,
    pub rel_error: f64,
    pub best_step: f64,
    pub tolerance: f64,
}

impl DerivativeCheck {
    pub fn passed(&self) -> bool {
        self.rel_error <= self.tolerance
    }
}

/// Central-difference steps used by the derivative checks.
pub const FD_STEPS: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

fn best_over_steps(name: &'static str, tolerance: f64, f: impl Fn(f64) -> Result<f64>) -> Result<DerivativeCheck> {
    let mut best = (f64::INFINITY, f64::NAN);
    for &h in &FD_STEPS {
        let e = f(h)?;
        if e < best.0 {
            best = (e, h);
        }
    }
    Ok(DerivativeCheck {
        name,
        rel_error: best.0,
        best_step: best.1,
        tolerance,
    })
}

/// Instance used by the derivative checks: seeded admissible coefficient,
/// direction and noisy data on an `n x n` grid.
pub struct DerivativeInstance {
    pub asm: Arc<Assembler<f64>>,
    pub settings: ForwardSettings<f64>,
    pub load: Vec<f64>,
    pub data: Vec<f64>,
    pub a: Vec<f64>,
    pub direction: Vec<f64>,
    pub reg: Regularizer<f64>,
}

impl DerivativeInstance {
    pub fn new(cfg: &ExperimentConfig, n: usize, sample: u64) -> Result<Self> {
        let setup = Setup::new(n)?;
        let m = setup.asm.dim();
        let seed = cfg.seed.wrapping_add(sample);
        let r = noise::uniform_stream::<f64>(seed, 10, 2 * m);
        let a: Vec<f64> = r[..m].iter().map(|&u| 0.5 + 1.5 * u).collect();
        let direction: Vec<f64> = r[m..].iter().map(|&u| 2.0 * u - 1.0).collect();
        let data = noise::perturb_data(&setup.u_interp, cfg.deltas[0], seed, noise::DATA_STREAM);
        Ok(Self {
            settings: ForwardSettings::new(cfg.eps, cfg.tau).with_form(cfg.form),
            load: setup.base_load.clone(),
            asm: setup.asm,
            data,
            a,
            direction,
            reg: Regularizer::h1(cfg.kappa),
        })
    }

    pub fn operator(&self, a: &[f64]) -> Result<RegularizedForwardOperator<f64>> {
        Ok(RegularizedForwardOperator::new(Arc::clone(&self.asm), a, self.settings)?)
    }

    /// Objective value and gradient at `a`.
    pub fn value_gradient(&self, kind: ObjectiveKind, a: &[f64]) -> Result<(f64, Vec<f64>)> {
        let op = self.operator(a)?;
        let r = objectives::evaluate(kind, &op, &self.load, &self.data, &self.reg)?;
        Ok((r.value, r.gradient))
    }

    pub fn hessian_action(&self, kind: ObjectiveKind, a: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        let op = self.operator(a)?;
        let r = objectives::evaluate(kind, &op, &self.load, &self.data, &self.reg)?;
        Ok(objectives::hessian_action(&op, &r, &self.reg, d)?)
    }

    fn shifted(&self, h: f64) -> (Vec<f64>, Vec<f64>) {
        let p = linalg::add(&self.a, &linalg::scaled(h, &self.direction));
        let m = linalg::sub(&self.a, &linalg::scaled(h, &self.direction));
        (p, m)
    }

    pub fn gradient_check(&self, kind: ObjectiveKind, name: &'static str, tol: f64) -> Result<DerivativeCheck> {
        let (_, g) = self.value_gradient(kind, &self.a)?;
        let exact = linalg::dot(&g, &self.direction);
        best_over_steps(name, tol, |h| {
            let (p, m) = self.shifted(h);
            let fd = (self.value_gradient(kind, &p)?.0 - self.value_gradient(kind, &m)?.0) / (2.0 * h);
            Ok((fd - exact).abs() / exact.abs())
        })
    }

    pub fn hessian_check(&self, kind: ObjectiveKind, name: &'static str, tol: f64) -> Result<DerivativeCheck> {
        let hd = self.hessian_action(kind, &self.a, &self.direction)?;
        best_over_steps(name, tol, |h| {
            let (p, m) = self.shifted(h);
            let gp = self.value_gradient(kind, &p)?.1;
            let gm = self.value_gradient(kind, &m)?.1;
            let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            Ok(linalg::norm2(&linalg::sub(&fd, &hd)) / linalg::norm2(&hd))
        })
    }

    /// Relative gap between the adjoint-route gradient (without the
    /// regularizer) and the direct formula.
    pub fn adjoint_direct_gap(&self) -> Result<f64> {
        let op = self.operator(&self.a)?;
        let v = op.solve_state(&self.load)?;
        let w = op.solve_adjoint(&v, &self.data)?;
        let ga = objectives::ols_gradient_adjoint(&op, &v, &w, &Regularizer::h1(0.0))?;
        let gd = objectives::ols_gradient_direct(&op, &v, &self.data)?;
        Ok(linalg::norm2(&linalg::sub(&ga, &gd)) / linalg::norm2(&gd))
    }
}

/// Gradient and Hessian checks of both objectives on one seeded instance.
pub fn check_gradients(cfg: &ExperimentConfig) -> Result<Vec<DerivativeCheck>> {
    cfg.validate()?;
    let inst = DerivativeInstance::new(cfg, cfg.sizes[0], 0)?;
    Ok(vec![
        DerivativeCheck {
            name: "ols_adjoint_vs_direct",
            rel_error: inst.adjoint_direct_gap()?,
            best_step: f64::NAN,
            tolerance: 1e-12,
        },
        inst.gradient_check(ObjectiveKind::Ols, "ols_gradient", 1e-5)?,
        inst.gradient_check(ObjectiveKind::Mols, "mols_gradient", 1e-5)?,
        inst.hessian_check(ObjectiveKind::Ols, "ols_hessian", 1e-4)?,
        inst.hessian_check(ObjectiveKind::Mols, "mols_hessian", 1e-4)?,
    ])
}

pub fn checks_csv(checks: &[DerivativeCheck]) -> Table {
    let mut t = Table::new(&["check", "rel_error", "best_step", "tolerance", "passed"]);
    for c in checks {
        t.push(vec![
            Cell::Text(c.name.into()),
            Cell::Error(c.rel_error),
            Cell::Real(c.best_step),
            Cell::Real(c.tolerance),
            Cell::Text(c.passed().to_string()),
        ]);
    }
    t
}

/// Interpolant of the exact state, for `emit_field` snapshots.
pub fn exact_state_field(n: usize) -> Result<(usize, usize, Vec<f64>)> {
    let setup = Setup::new(n)?;
    let (nx, ny) = setup.grid();
    Ok((nx, ny, setup.u_interp))
}
