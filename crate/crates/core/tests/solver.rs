use std::sync::Arc;

use ultranet::calculus::{restrict, GridFunction, TestFunction};
use ultranet::grid::{build_level, Domain};
use ultranet::problems::{dirichlet_spec, quadratic_spec, sawtooth_spec};
use ultranet::solver::{
    check_gradient, default_battery, minimize_level, solve_net, verify_euler_lagrange, LbfgsOptions, Sampler,
    SolveOptions,
};

#[test]
fn quadratic_minimizer_is_the_target() {
    let d = Domain::unit(2).unwrap();
    let f: Sampler = Arc::new(|x: &[f64]| (3.0 * x[0]).sin() + x[1] * x[1]);
    let spec = quadratic_spec(f.clone(), d.clone());
    let level = build_level(&d, 4).unwrap();
    let r = minimize_level(&spec, &GridFunction::zeros(&level), &LbfgsOptions::default()).unwrap();
    let target = restrict(|x| f(x), &level).unwrap();
    assert!(r.converged);
    assert!(r.value < 1e-14, "{}", r.value);
    let err = r.u.values().iter().zip(target.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-7, "{err}");
}

#[test]
fn dirichlet_with_zero_data_gives_zero() {
    let d = Domain::unit(2).unwrap();
    let spec = dirichlet_spec(Arc::new(|_: &[f64]| 0.0), d);
    let report = solve_net(&spec, 2..=4, &SolveOptions { multistart: 0, ..SolveOptions::default() }).unwrap();
    for (_, _, r) in report.results.iter() {
        assert!(r.converged);
        assert!(r.value.abs() < 1e-14);
        assert!(r.u.max_abs() < 1e-7);
    }
}

#[test]
fn dirichlet_with_affine_data_is_exact() {
    // P1 elements reproduce affine functions, so the minimum is |∇g|² exactly
    let d = Domain::unit(2).unwrap();
    let spec = dirichlet_spec(Arc::new(|x: &[f64]| 2.0 * x[0] - x[1] + 0.5), d);
    let report = solve_net(&spec, 2..=4, &SolveOptions::default()).unwrap();
    assert!(report.monotone_violations.is_empty());
    for (_, _, r) in report.results.iter() {
        assert!((r.value - 5.0).abs() < 1e-10, "{}", r.value);
    }
}

#[test]
fn residual_separates_minimizers_from_other_points() {
    let d = Domain::unit(2).unwrap();
    let spec = dirichlet_spec(Arc::new(|x: &[f64]| x[0] * x[1]), d.clone());
    let level = build_level(&d, 4).unwrap();
    let start = spec.initial(&level).unwrap();
    let battery: Vec<TestFunction> = default_battery(&d);
    let bent = restrict(|x| x[0] * x[1] + (x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])), &level).unwrap();
    let off = verify_euler_lagrange(&spec, &bent, &battery).unwrap();
    assert!(off.weak_max > 1e-2, "{off:?}");
    let r = minimize_level(&spec, &start, &LbfgsOptions::default()).unwrap();
    let on = verify_euler_lagrange(&spec, &r.u, &battery).unwrap();
    assert!(on.weak_max < 1e-6, "{on:?}");
    assert!(on.strong_l2 < 1e-5);
}

#[test]
fn analytic_gradients_match_differences() {
    let d = Domain::unit(1).unwrap();
    let level = build_level(&d, 5).unwrap();
    let u = restrict(|x| (7.0 * x[0]).sin() * 0.1, &level).unwrap();
    assert!(check_gradient(&sawtooth_spec(), &u, 20, 1).unwrap() < 1e-5);
    let d2 = Domain::unit(2).unwrap();
    let level = build_level(&d2, 3).unwrap();
    let u = restrict(|x| x[0] * x[0] - x[1], &level).unwrap();
    let spec = dirichlet_spec(Arc::new(|x: &[f64]| x[0] * x[0] - x[1]), d2);
    assert!(check_gradient(&spec, &u, 20, 2).unwrap() < 1e-5);
}

#[test]
fn short_level_ranges_are_rejected() {
    assert!(solve_net(&sawtooth_spec(), 3..=4, &SolveOptions::default()).is_err());
}
