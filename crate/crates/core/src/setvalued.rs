//! Limit checks for the first and second order derivative characterizations
//! of the (set-valued) parameter-to-solution map.
//!
//! Nothing here computes cones. A [`ContingentProbe`] fixes a base
//! coefficient `a`, the selected solution `u` of the unregularized problem
//! and directions `dA`, `dA2`; running it along a schedule produces the
//! regularized sensitivities, and the residuals measure how well they
//! satisfy the limit equations
//!
//! * `K(a) du + K(dA) u = 0` (first order),
//! * `K(a) d2u + 2 K(dA) du + K(dA2) u = 0` (second order).
//!
//! In the pure-Neumann case residuals are functionals that must annihilate
//! constants; they are projected accordingly before the dual norm is taken.

use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::Assembler;
use crate::forward::{
    limit_solution, project_functional, project_mean_zero, ForwardSettings, RegularizationSchedule,
    RegularizedForwardOperator, ScheduleEntry, StateForm,
};
use crate::linalg;
use crate::{Error, Real, Result};

#[derive(Debug, Clone)]
pub struct ContingentProbe<T> {
    asm: Arc<Assembler<T>>,
    a_bar: Vec<T>,
    u_bar: Vec<T>,
    load: Vec<T>,
    da: Vec<T>,
    da2: Vec<T>,
    form: StateForm,
    steering: Option<Vec<T>>,
    functional_direction: Option<Vec<T>>,
    /// exact first-order limit `du`
    du_limit: Vec<T>,
}

/// Per-entry quantities of a probe run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord<T> {
    pub index: usize,
    pub entry: ScheduleEntry<T>,
    pub residual_fcd: T,
    pub residual_scd: T,
    /// second-order residual with the exact first-order limit substituted
    pub residual_scd1: T,
    /// `||dV_n||_W`
    pub sens_norm: T,
    /// `||V_n - u||_W` (mean-zero part for the pure-Neumann form)
    pub state_gap: T,
    /// `||dV_n - du||_W`
    pub sens_gap: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundednessReport<T> {
    pub sup_sensitivity: T,
    pub median_sensitivity: T,
    /// log-log slope of the state gap against `eps`
    pub disc_slope: T,
    /// log-log slope of the first-order residual against `eps`
    pub fcd_slope: T,
    /// `sup > 10 * median`
    pub growth: bool,
    /// `tau/eps`, `nu/eps` or `delta/eps` fail to decay along the schedule
    pub schedule_violation: bool,
}

impl<T> BoundednessReport<T> {
    pub fn flagged(&self) -> bool {
        self.growth || self.schedule_violation
    }
}

impl<T: Real> ContingentProbe<T> {
    /// `load` is the unperturbed load functional; the base solution is the
    /// mean-zero (pure Neumann) or unique (coercive) limit solution.
    pub fn new(
        asm: Arc<Assembler<T>>,
        a_bar: Vec<T>,
        load: Vec<T>,
        da: Vec<T>,
        da2: Vec<T>,
        form: StateForm,
    ) -> Result<Self> {
        for v in [&a_bar, &load, &da, &da2] {
            Error::check_len("contingent probe", asm.dim(), v.len())?;
        }
        let u_bar = limit_solution(&asm, &a_bar, &load, form)?;
        let rhs = linalg::scaled(-T::one(), &asm.stiffness(&da)?.mul_vec(&u_bar)?);
        let du_limit = limit_solution(&asm, &a_bar, &rhs, form)?;
        Ok(Self {
            asm,
            a_bar,
            u_bar,
            load,
            da,
            da2,
            form,
            steering: None,
            functional_direction: None,
            du_limit,
        })
    }

    /// Steering data `z` for `ell(v) = <z, v>_V`.
    pub fn with_steering(mut self, z: Vec<T>) -> Self {
        self.steering = Some(z);
        self
    }

    /// Direction of the `nu_n` functional perturbation.
    pub fn with_functional_noise(mut self, direction: Vec<T>) -> Self {
        self.functional_direction = Some(direction);
        self
    }

    pub fn base_solution(&self) -> &[T] {
        &self.u_bar
    }

    pub fn limit_sensitivity(&self) -> &[T] {
        &self.du_limit
    }

    pub fn form(&self) -> StateForm {
        self.form
    }

    /// Limit operator applied to `v`: `K(a) v` or `(K(a) + W) v`.
    fn limit_apply(&self, k_bar: &crate::sparse::SparseSymMatrix<T>, v: &[T]) -> Result<Vec<T>> {
        let mut r = k_bar.mul_vec(v)?;
        if self.form == StateForm::Coercive {
            r = linalg::add(&r, &self.asm.s_matrix().mul_vec(v)?);
        }
        Ok(r)
    }

    /// Dual norm, after projecting off constants in the pure-Neumann case.
    fn residual_norm(&self, r: &[T]) -> Result<T> {
        match self.form {
            StateForm::PureNeumann => self.asm.dual_norm(&project_functional(&self.asm, r)),
            StateForm::Coercive => self.asm.dual_norm(r),
        }
    }

    fn primal_gap(&self, x: &[T], y: &[T]) -> T {
        let d = linalg::sub(x, y);
        match self.form {
            StateForm::PureNeumann => self.asm.h1_norm(&project_mean_zero(&self.asm, &d)),
            StateForm::Coercive => self.asm.h1_norm(&d),
        }
    }

    /// `||K(a) dV + K(dA) u||` for a given first-order candidate.
    pub fn fcd_residual_of(&self, dv: &[T]) -> Result<T> {
        let k_bar = self.asm.stiffness(&self.a_bar)?;
        let r = linalg::add(&self.limit_apply(&k_bar, dv)?, &self.asm.stiffness(&self.da)?.mul_vec(&self.u_bar)?);
        self.residual_norm(&r)
    }

    /// `||K(a) d2V + 2 K(dA) dV + K(dA2) u||`.
    pub fn scd_residual_of(&self, d2v: &[T], dv: &[T]) -> Result<T> {
        let k_bar = self.asm.stiffness(&self.a_bar)?;
        let mut r = self.limit_apply(&k_bar, d2v)?;
        linalg::axpy(T::lit(2.0), &self.asm.stiffness(&self.da)?.mul_vec(dv)?, &mut r);
        r = linalg::add(&r, &self.asm.stiffness(&self.da2)?.mul_vec(&self.u_bar)?);
        self.residual_norm(&r)
    }

    /// Split form of the second-order equation: the pure second derivative
    /// part `K(a) D2V + 2 K(dA) du` and the first-order part in direction
    /// `dA2`, `K(a) dV(dA2) + K(dA2) u`, with the exact `du` substituted.
    pub fn scd1_residual_of(&self, d2v_pure: &[T], dv_second_dir: &[T]) -> Result<T> {
        let k_bar = self.asm.stiffness(&self.a_bar)?;
        let mut ra = self.limit_apply(&k_bar, d2v_pure)?;
        linalg::axpy(T::lit(2.0), &self.asm.stiffness(&self.da)?.mul_vec(&self.du_limit)?, &mut ra);
        let rb = linalg::add(
            &self.limit_apply(&k_bar, dv_second_dir)?,
            &self.asm.stiffness(&self.da2)?.mul_vec(&self.u_bar)?,
        );
        self.residual_norm(&linalg::add(&ra, &rb))
    }

    fn load_for(&self, e: &ScheduleEntry<T>) -> Result<Vec<T>> {
        let mut p = self.load.clone();
        if let Some(dir) = &self.functional_direction {
            linalg::axpy(e.nu, dir, &mut p);
        }
        if let Some(z) = &self.steering {
            linalg::axpy(e.eps, &self.asm.s_matrix().mul_vec(z)?, &mut p);
        }
        Ok(p)
    }

    /// Solves entry `index` of the schedule and evaluates all residuals.
    pub fn record(&self, index: usize, e: &ScheduleEntry<T>) -> Result<ProbeRecord<T>> {
        let settings = ForwardSettings::new(e.eps, e.tau).with_form(self.form);
        let op = RegularizedForwardOperator::new(Arc::clone(&self.asm), &self.a_bar, settings)?;
        let v = op.solve_state(&self.load_for(e)?)?;
        let dv = op.solve_sensitivity(&v, &self.da)?;
        let dv2 = op.solve_sensitivity(&v, &self.da2)?;
        let d2v_pure = op.solve_second_sensitivity(&self.da, &self.da, &dv, &dv)?;
        let d2v = linalg::add(&dv2, &d2v_pure);
        Ok(ProbeRecord {
            index,
            entry: *e,
            residual_fcd: self.fcd_residual_of(&dv)?,
            residual_scd: self.scd_residual_of(&d2v, &dv)?,
            residual_scd1: self.scd1_residual_of(&d2v_pure, &dv2)?,
            sens_norm: self.asm.h1_norm(&dv),
            state_gap: self.primal_gap(&v, &self.u_bar),
            sens_gap: self.primal_gap(&dv, &self.du_limit),
        })
    }

    /// All schedule entries, evaluated in parallel and returned in order.
    pub fn run(&self, schedule: &RegularizationSchedule<T>) -> Result<Vec<ProbeRecord<T>>> {
        schedule
            .entries()
            .par_iter()
            .enumerate()
            .map(|(i, e)| self.record(i, e))
            .collect()
    }
}

/// Least-squares slope of `log y` against `log x` over positive pairs.
pub fn fit_slope<T: Real>(x: &[T], y: &[T]) -> T {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(&a, &b)| a > T::zero() && b > T::zero())
        .map(|(&a, &b)| (a.as_f64().ln(), b.as_f64().ln()))
        .collect();
    if pts.len() < 2 {
        return T::nan();
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    T::lit(sxy / sxx)
}

/// Summarizes a probe run: sensitivity bound, rates, and flags.
pub fn boundedness_report<T: Real>(
    records: &[ProbeRecord<T>],
    schedule: &RegularizationSchedule<T>,
) -> BoundednessReport<T> {
    let eps: Vec<T> = records.iter().map(|r| r.entry.eps).collect();
    let gaps: Vec<T> = records.iter().map(|r| r.state_gap).collect();
    let fcd: Vec<T> = records.iter().map(|r| r.residual_fcd).collect();
    let mut sens: Vec<T> = records.iter().map(|r| r.sens_norm).collect();
    sens.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let sup = sens.last().copied().unwrap_or(T::zero());
    let median = if sens.is_empty() { T::zero() } else { sens[sens.len() / 2] };
    BoundednessReport {
        sup_sensitivity: sup,
        median_sensitivity: median,
        disc_slope: fit_slope(&eps, &gaps),
        fcd_slope: fit_slope(&eps, &fcd),
        growth: sup > T::lit(10.0) * median,
        schedule_violation: !schedule.ratios_vanish(T::lit(0.5)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1e-1, 1e-2, 1e-3];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((fit_slope(&x, &y) - 1.5).abs() < 1e-12);
        assert!(fit_slope(&[1.0_f64], &[1.0]).is_nan());
    }
}
