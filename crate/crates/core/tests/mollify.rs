use std::f64::consts::TAU;

use korteweg_core::dynamics::{Diagnostics, Trajectory};
use korteweg_core::mollify::{continuity_residual, extend_negative_time, mollify_pair};
use korteweg_core::{FluidState, MollifierSpec, ScalarField, TorusGrid, VectorField};
use num_complex::Complex64;
use proptest::prelude::*;

fn line(n: usize) -> TorusGrid {
    TorusGrid::unit(1, n).unwrap()
}

fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

fn bump(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        (-1.0 / (s * (1.0 - s))).exp()
    }
}

/// Travelling wave `rho = 1 + a sin(2 pi (x - c t))` with momentum `factor * c * rho`;
/// `factor = 1` solves the continuity equation exactly.
fn travelling_wave(grid: &TorusGrid, a: f64, c: f64, factor: f64, spacing: f64, t_end: f64) -> Trajectory<FluidState> {
    let mut traj = Trajectory::new(spacing);
    let steps = (t_end / spacing).round() as usize;
    for i in 0..=steps {
        let t = i as f64 * spacing;
        let rho = ScalarField::from_fn(grid, |x| 1.0 + a * (TAU * (x[0] - c * t)).sin());
        let m = VectorField::from_fn(grid, |x| [factor * c * (1.0 + a * (TAU * (x[0] - c * t)).sin()), 0.0]);
        traj.push(t, FluidState::new(rho, m).unwrap(), Diagnostics::default());
    }
    traj
}

#[test]
fn kernel_transform_matches_quadrature() {
    let mass = simpson(bump, 200_000);
    for n in [2usize, 4, 16] {
        let spec = MollifierSpec::new(n).unwrap();
        for omega in [0.0, 3.0, TAU, 25.0, 100.0] {
            let w = omega / n as f64;
            let re = simpson(|s| bump(s) * (w * s).cos(), 200_000) / mass;
            let im = -simpson(|s| bump(s) * (w * s).sin(), 200_000) / mass;
            let z = spec.transform(omega);
            assert!((z.re - re).abs() <= 1e-8 && (z.im - im).abs() <= 1e-8, "n = {n}, omega = {omega}: {z} vs {re} {im}");
        }
    }
}

#[test]
fn single_mode_is_scaled_by_the_transform_in_2d() {
    let grid = TorusGrid::unit(2, 32).unwrap();
    let spec = MollifierSpec::new(4).unwrap();
    let f = ScalarField::from_fn(&grid, |x| (TAU * 2.0 * x[0]).cos() * (TAU * 3.0 * x[1]).sin());
    let out = spec.mollify_space(&f).unwrap();
    // phi * e^{i w x} = T(w) e^{i w x}; cos and sin are the real and imaginary parts.
    let (a, b) = (spec.transform(TAU * 2.0), spec.transform(TAU * 3.0));
    for i in 0..grid.len() {
        let [x, y] = grid.coordinates(i);
        let ex = a * Complex64::from_polar(1.0, TAU * 2.0 * x);
        let ey = b * Complex64::from_polar(1.0, TAU * 3.0 * y);
        assert!((out.values()[i] - ex.re * ey.im).abs() <= 1e-12);
    }
}

#[test]
fn extension_holds_initial_density_at_rest() {
    let grid = line(16);
    let traj = travelling_wave(&grid, 0.1, 0.5, 1.0, 1.0 / 64.0, 0.25);
    let spec = MollifierSpec::new(4).unwrap();
    let ext = extend_negative_time(&traj, &spec).unwrap();
    assert!(ext.history() >= spec.width());
    for (t, s) in ext.times[..ext.origin].iter().zip(&ext.states) {
        assert!(*t < 0.0);
        assert_eq!(s.rho, traj.states[0].rho);
        assert_eq!(s.m.max_abs(), 0.0);
    }
    let (times, states) = ext.restrict();
    assert_eq!(times, &traj.times[..]);
    assert_eq!(states, &traj.states[..]);
}

#[test]
fn continuity_residual_is_second_order_and_control_stays_away_from_zero() {
    let grid = line(32);
    let spec = MollifierSpec::new(8).unwrap();
    let residual = |k: usize, factor: f64| {
        let traj = travelling_wave(&grid, 0.1, 0.5, factor, spec.width() / k as f64, 0.5);
        let pair = mollify_pair(&extend_negative_time(&traj, &spec).unwrap(), &spec).unwrap();
        continuity_residual(&pair).unwrap()
    };
    let (r1, r2) = (residual(16, 1.0), residual(32, 1.0));
    // Ratio estimates of a second-order error approach 2 from below.
    let order = (r1 / r2).log2();
    assert!(order >= 1.99, "order {order}: {r1:e}, {r2:e}");

    // m = 2 c rho: residual is at least 0.1 max |div m| = 0.1 * 2 c a 2 pi.
    let div_m = 2.0 * 0.5 * 0.1 * TAU;
    assert!(residual(16, 2.0) >= 0.1 * div_m);
}

#[test]
fn distance_to_original_decreases_with_n() {
    let grid = line(32);
    let mut last = f64::INFINITY;
    for n in [4usize, 8, 16, 32] {
        let spec = MollifierSpec::new(n).unwrap();
        let traj = travelling_wave(&grid, 0.1, 0.5, 1.0, spec.width() / 8.0, 0.25);
        let ext = extend_negative_time(&traj, &spec).unwrap();
        let d = mollify_pair(&ext, &spec).unwrap().l2_distance(&ext);
        assert!(d < last, "n = {n}: {d} >= {last}");
        last = d;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mollification_commutes_with_derivatives_and_keeps_mass(
        coeffs in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..6),
        n in 1usize..20,
    ) {
        let grid = line(64);
        let f = ScalarField::from_fn(&grid, |x| 2.0 + coeffs.iter().enumerate().map(|(k, (a, b))| {
            let w = TAU * (k + 1) as f64 * x[0];
            0.1 * (a * w.sin() + b * w.cos())
        }).sum::<f64>());
        let spec = MollifierSpec::new(n).unwrap();
        let a = spec.mollify_space(&f.derivative(0).unwrap()).unwrap();
        let b = spec.mollify_space(&f).unwrap().derivative(0).unwrap();
        prop_assert!((&a - &b).max_abs() <= 1e-12);
        let mass = f.integrate().unwrap();
        prop_assert!((spec.mollify_space(&f).unwrap().integrate().unwrap() - mass).abs() <= 1e-13 * mass);
    }

    /// Jensen: |m^n|^2 / rho^n <= (|m|^2 / rho)^n nodewise for arbitrary snapshots.
    #[test]
    fn jensen_inequality_holds_nodewise(
        a in 0.0..0.5f64, c in -2.0..2.0f64, u in -3.0..3.0f64, n in 2usize..9,
    ) {
        let grid = line(32);
        let spec = MollifierSpec::new(n).unwrap();
        let spacing = spec.width() / 8.0;
        let mut traj = Trajectory::new(spacing);
        for i in 0..=40 {
            let t = i as f64 * spacing;
            let rho = ScalarField::from_fn(&grid, |x| 1.0 + a * (TAU * (x[0] - c * t)).sin());
            let m = VectorField::from_fn(&grid, |x| [u * (TAU * (2.0 * x[0] + t)).cos(), 0.0]);
            traj.push(t, FluidState::new(rho, m).unwrap(), Diagnostics::default());
        }
        let pair = mollify_pair(&extend_negative_time(&traj, &spec).unwrap(), &spec).unwrap();
        prop_assert!(pair.jensen_excess() <= 1e-12);
        for rho in &pair.rho {
            prop_assert!((rho.integrate().unwrap() - 1.0).abs() <= 1e-13);
        }
    }
}
