mod common;

use std::sync::Arc;

use coeffid::assembly::{Assembler, Steering};
use coeffid::forward::{project_mean_zero, RegularizationSchedule, StateForm};
use coeffid::linalg;
use coeffid::manufactured::ManufacturedProblem;
use coeffid::mesh::{P1Space, SpaceRole};
use coeffid::setvalued::{boundedness_report, ContingentProbe};
use common::{assembler, rel_diff};

fn probe(n: usize, form: StateForm, zero_dirs: bool) -> (Arc<Assembler<f64>>, ContingentProbe<f64>) {
    let asm = assembler(n);
    let problem = ManufacturedProblem::<f64>::new();
    let load = problem.with_load_data(|d| asm.load(d, None, Steering::Zero, 0.0)).unwrap();
    let space = P1Space::new(Arc::clone(asm.mesh()), SpaceRole::Parameter);
    let (da, da2) = if zero_dirs {
        (vec![0.0; asm.dim()], vec![0.0; asm.dim()])
    } else {
        (
            space.interpolate(|x, y| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).cos() + 0.5 * x * y),
            space.interpolate(|x, y| 1.0 + x * x - 0.5 * y),
        )
    };
    let p = ContingentProbe::new(Arc::clone(&asm), vec![1.0; asm.dim()], load, da, da2, form).unwrap();
    (asm, p)
}

#[test]
fn coercive_limits_are_reached_at_first_order_in_eps() {
    let (_, p) = probe(12, StateForm::Coercive, false);
    let schedule = RegularizationSchedule::default_geometric(8).unwrap();
    let records = p.run(&schedule).unwrap();
    let report = boundedness_report(&records, &schedule);
    assert!((report.fcd_slope - 1.0).abs() <= 0.2, "{report:?}");
    assert!((report.disc_slope - 1.0).abs() <= 0.2, "{report:?}");
    assert!(!report.flagged(), "{report:?}");
    let scd: Vec<f64> = records.iter().map(|r| r.residual_scd).collect();
    assert!(scd.windows(2).all(|w| w[1] < w[0]), "{scd:?}");
    // the sensitivities converge to the derivative of the limit problem
    let gaps: Vec<f64> = records.iter().map(|r| r.sens_gap).collect();
    assert!(gaps.last().unwrap() < &(1e-2 * gaps[0]), "{gaps:?}");
}

#[test]
fn neumann_residuals_decrease_and_sensitivities_stay_bounded() {
    let (_, p) = probe(12, StateForm::PureNeumann, false);
    let schedule = RegularizationSchedule::default_geometric(8).unwrap();
    let records = p.run(&schedule).unwrap();
    let fcd: Vec<f64> = records.iter().map(|r| r.residual_fcd).collect();
    assert!(fcd[2..].windows(2).all(|w| w[1] < w[0]), "{fcd:?}");
    let report = boundedness_report(&records, &schedule);
    assert!(!report.growth, "{report:?}");
    assert!(report.sup_sensitivity.is_finite());
}

#[test]
fn degenerate_schedule_is_flagged() {
    let (_, p) = probe(8, StateForm::Coercive, false);
    // tau_n = eps_n keeps tau/eps at one
    let schedule = RegularizationSchedule::geometric(6, 0.1, 0.5, 1.0, 1.5, 1.5, 1.0).unwrap();
    let records = p.run(&schedule).unwrap();
    let report = boundedness_report(&records, &schedule);
    assert!(report.schedule_violation);
    assert!(report.flagged());
}

#[test]
fn zero_directions_give_zero_residuals() {
    let (_, p) = probe(6, StateForm::PureNeumann, true);
    let schedule = RegularizationSchedule::default_geometric(3).unwrap();
    for r in p.run(&schedule).unwrap() {
        assert_eq!(r.residual_fcd, 0.0);
        assert_eq!(r.residual_scd, 0.0);
        assert_eq!(r.sens_norm, 0.0);
    }
}

#[test]
fn second_order_forms_agree_under_substitution() {
    let (asm, p) = probe(8, StateForm::PureNeumann, false);
    let m = asm.dim();
    let d2v_pure = common::uniform(1, m, -1.0, 1.0);
    let dv2 = common::uniform(2, m, -1.0, 1.0);
    let d2v = linalg::add(&d2v_pure, &dv2);
    let scd = p.scd_residual_of(&d2v, p.limit_sensitivity()).unwrap();
    let scd1 = p.scd1_residual_of(&d2v_pure, &dv2).unwrap();
    assert!((scd - scd1).abs() <= 1e-12 * scd.max(1.0), "{scd} vs {scd1}");
}

#[test]
fn solution_set_is_invariant_under_constant_shifts() {
    let (asm, p) = probe(10, StateForm::PureNeumann, false);
    let k = asm.stiffness(&vec![1.0; asm.dim()]).unwrap();
    let u = p.base_solution();
    let base = k.mul_vec(u).unwrap();
    for t in [-3.0, 0.5, 10.0] {
        let shifted: Vec<f64> = u.iter().map(|x| x + t).collect();
        let r = k.mul_vec(&shifted).unwrap();
        assert!(linalg::norm_inf(&linalg::sub(&r, &base)) <= 1e-12 * (1.0 + t.abs()));
    }
    // the limit sensitivity solves the first-order equation
    assert!(p.fcd_residual_of(p.limit_sensitivity()).unwrap() < 1e-10);
    // projection commutes with the stiffness action
    let v = common::uniform(9, asm.dim(), -1.0, 1.0);
    let kv = k.mul_vec(&v).unwrap();
    let kpv = k.mul_vec(&project_mean_zero(&asm, &v)).unwrap();
    assert!(rel_diff(&kpv, &kv) < 1e-13);
}
