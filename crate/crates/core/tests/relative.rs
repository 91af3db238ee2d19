use std::f64::consts::{PI, TAU};

use korteweg_core::dynamics::{ch_rhs, Trajectory};
use korteweg_core::rate::fit_loglog;
use korteweg_core::relative::{
    ch_lift, ek_relative_energy, euler_relative_energy, rel_capillary_point, rel_h_gamma, rel_kinetic, reduced_relative_energy,
    LiftTimeDerivative,
};
use korteweg_core::{BumpSpec, CapillarityLaw, EnergyLaw, FluidState, Material, ScalarField, TorusGrid, VectorField};
use proptest::prelude::*;

fn line(n: usize) -> TorusGrid {
    TorusGrid::unit(1, n).unwrap()
}

/// Composite Simpson rule on `[0, 1]`.
fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn gamma_relative_energy_matches_taylor_remainder() {
    let law = EnergyLaw::gamma_law(1.0, 1.5).unwrap();
    let (rho, rho_bar) = (2.0, 1.0);
    let d = rho - rho_bar;
    let oracle = simpson(|s| (1.0 - s) * law.d2h(rho_bar + s * d), 200_000) * d * d;
    let value = rel_h_gamma(&law, rho, rho_bar);
    assert!((value - oracle).abs() <= 1e-8 * oracle, "{value} vs {oracle}");
}

#[test]
fn quadratic_relative_energy_closed_form() {
    // gamma = 2, no bump, constant kappa, m = 0: h(.|.) = c (rho - rho_bar)^2 and
    // F(.|.) = (eps C / 2)|grad(rho - rho_bar)|^2, so the total is
    // c a^2 / 2 + eps C pi^2 a^2 per unit length.
    let (c, cap, eps, a) = (1.3, 0.4, 0.25, 0.05);
    let grid = line(64);
    let material = Material::new(EnergyLaw::gamma_law(c, 2.0).unwrap(), CapillarityLaw::Constant(cap), eps).unwrap();
    let bar = ScalarField::from_fn(&grid, |x| 1.0 + 0.2 * (TAU * x[0]).cos());
    let rho = ScalarField::from_fn(&grid, |x| 1.0 + 0.2 * (TAU * x[0]).cos() + a * (TAU * x[0]).sin());
    let state = FluidState::at_rest(rho).unwrap();
    let reference = FluidState::at_rest(bar).unwrap();
    let exact = c * a * a / 2.0 + eps * cap * PI * PI * a * a;
    let report = ek_relative_energy(&state, &reference, &material).unwrap();
    assert!((report.total - exact).abs() <= 1e-13, "{} vs {exact}", report.total);
    assert!(report.kinetic == 0.0 && report.internal_bump == 0.0);
    let reduced = reduced_relative_energy(&state, &reference, &material).unwrap();
    assert!((reduced - exact).abs() <= 1e-13);
}

#[test]
fn relative_energy_scales_quadratically_with_perturbation() {
    let grid = line(64);
    let energy = EnergyLaw::new(1.0, 2.0, Some(BumpSpec::new(0.3, 0.6, 1.5).unwrap())).unwrap();
    let material = Material::new(energy, CapillarityLaw::Constant(0.05), 1.0).unwrap();
    let bar = FluidState::from_velocity(
        ScalarField::from_fn(&grid, |x| 1.0 + 0.2 * (TAU * x[0]).sin()),
        &VectorField::from_fn(&grid, |x| [0.3 * (TAU * x[0]).cos(), 0.0]),
    )
    .unwrap();
    let amps = [1e-2, 1e-3, 1e-4];
    let totals: Vec<f64> = amps
        .iter()
        .map(|&a| {
            let rho = bar.rho.zip_map(&ScalarField::from_fn(&grid, |x| (2.0 * TAU * x[0]).cos()), |r, p| r + a * p);
            let m = bar.m.zip_map(&VectorField::from_fn(&grid, |x| [(TAU * x[0]).sin(), 0.0]), |m, p| m + a * p);
            let state = FluidState::new(rho, m).unwrap();
            ek_relative_energy(&state, &bar, &material).unwrap().total
        })
        .collect();
    let slope = fit_loglog(&amps, &totals).unwrap().slope;
    assert!((1.9..=2.1).contains(&slope), "slope {slope}");
}

#[test]
fn euler_functional_keeps_own_gradient_energy_and_is_affine_in_eps() {
    let grid = line(64);
    let energy = EnergyLaw::gamma_law(1.0, 2.0).unwrap();
    let rho = ScalarField::from_fn(&grid, |x| 1.0 + 0.1 * (TAU * x[0]).sin());
    let state = FluidState::at_rest(rho.clone()).unwrap();
    let at = |eps: f64| {
        let material = Material::new(energy, CapillarityLaw::Qhd, eps).unwrap();
        euler_relative_energy(&state, &state, &material).unwrap()
    };
    assert_eq!(at(0.0), 0.0);
    // eps int kappa |grad rho|^2 / 2 with kappa = 1/rho
    let oracle = 0.5
        * simpson(
            |x| {
                let r = 1.0 + 0.1 * (TAU * x).sin();
                let r1 = 0.1 * TAU * (TAU * x).cos();
                r1 * r1 / r
            },
            100_000,
        );
    for eps in [0.1, 0.2, 0.4] {
        assert!((at(eps) - eps * oracle).abs() <= 1e-12, "eps = {eps}");
    }
    assert!((at(0.4) - 2.0 * at(0.2)).abs() <= 1e-14);
}

#[test]
fn lift_of_constant_density_vanishes() {
    let grid = line(32);
    let energy = EnergyLaw::new(1.0, 2.0, Some(BumpSpec::new(0.2, 0.5, 1.5).unwrap())).unwrap();
    let mut traj = Trajectory::new(0.1);
    for i in 0..4 {
        traj.push(0.1 * i as f64, ScalarField::constant(&grid, 1.1), Default::default());
    }
    for derivative in [LiftTimeDerivative::Centered, LiftTimeDerivative::Analytic] {
        let lift = ch_lift(&traj, &energy, 0.05, 0.1, 1e-8, derivative).unwrap();
        assert!(lift.m_bar_max.iter().all(|&m| m == 0.0));
        assert!(lift.e_bar_sup() == 0.0);
    }
}

#[test]
fn lift_momentum_is_linear_in_eps_for_frozen_density() {
    let grid = line(32);
    let energy = EnergyLaw::gamma_law(1.0, 2.0).unwrap();
    let rho = ScalarField::from_fn(&grid, |x| 1.0 + 0.1 * (TAU * x[0]).sin());
    let mut traj = Trajectory::new(0.1);
    for i in 0..3 {
        traj.push(0.1 * i as f64, rho.clone(), Default::default());
    }
    let m = |eps| ch_lift(&traj, &energy, 0.05, eps, 1e-8, LiftTimeDerivative::Centered).unwrap().m_bar_max[0];
    assert!((m(0.2) - 2.0 * m(0.1)).abs() <= 1e-15 * m(0.2).max(1.0));
    // Exact: m_bar = -eps rho d/dx(2 rho - C rho'') = -eps rho (2 + C (2 pi)^2) rho'.
    let exact = (0..grid.len())
        .map(|i| {
            let x = grid.coordinates(i)[0];
            let r = 1.0 + 0.1 * (TAU * x).sin();
            (0.1 * r * (2.0 + 0.05 * TAU * TAU) * 0.1 * TAU * (TAU * x).cos()).abs()
        })
        .fold(0.0, f64::max);
    assert!((m(0.1) - exact).abs() <= 1e-12, "{} vs {exact}", m(0.1));
    assert!(ch_rhs(&rho, &energy, 0.05).unwrap().integrate().unwrap().abs() < 1e-13);
}

fn coincident(rho: &ScalarField, m: &VectorField, material: &Material) -> f64 {
    let s = FluidState::new(rho.clone(), m.clone()).unwrap();
    ek_relative_energy(&s, &s, material).unwrap().total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Relative kinetic energy against its definition K(a) - K(b) - DK(b)(a - b)
    /// for K(rho, m) = |m|^2 / (2 rho).
    #[test]
    fn relative_kinetic_is_the_taylor_remainder(
        r in prop::collection::vec((0.2..3.0f64, 0.2..3.0f64, -2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), 16),
    ) {
        let grid = TorusGrid::unit(2, 16).unwrap();
        let idx = |n: usize| n % r.len();
        let f = |k: usize| ScalarField::new(&grid, (0..grid.len()).map(|n| {
            let t = r[idx(n)];
            [t.0, t.1, t.2, t.3, t.4, t.5][k]
        }).collect()).unwrap();
        let state = FluidState::new(f(0), VectorField::from_scalars(vec![f(2), f(3)]).unwrap()).unwrap();
        let bar = FluidState::new(f(1), VectorField::from_scalars(vec![f(4), f(5)]).unwrap()).unwrap();
        let k = rel_kinetic(&state, &bar, 1e-8).unwrap();
        for n in 0..grid.len() {
            let (a, b, m0, m1, n0, n1) = r[idx(n)];
            let kin = |rho: f64, x: f64, y: f64| (x * x + y * y) / (2.0 * rho);
            let d_rho = -(n0 * n0 + n1 * n1) / (2.0 * b * b);
            let oracle = kin(a, m0, m1) - kin(b, n0, n1) - d_rho * (a - b) - (n0 / b) * (m0 - n0) - (n1 / b) * (m1 - n1);
            prop_assert!((k.values()[n] - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));
        }
    }

    /// QHD capillary relative energy is pointwise non-negative.
    #[test]
    fn qhd_relative_capillary_energy_is_nonnegative(
        rho in 0.05..5.0f64, rho_bar in 0.05..5.0f64,
        q in (-10.0..10.0f64, -10.0..10.0f64), qb in (-10.0..10.0f64, -10.0..10.0f64),
    ) {
        let p = rel_capillary_point(&CapillarityLaw::Qhd, 1.0, rho, [q.0, q.1], rho_bar, [qb.0, qb.1], 2);
        // The relative energy of a convex function vanishes quadratically, so
        // allow only round-off below zero.
        let scale = (q.0 * q.0 + q.1 * q.1) / rho + (qb.0 * qb.0 + qb.1 * qb.1) / rho_bar;
        prop_assert!(p.f >= -1e-13 * scale.max(1.0), "F = {}", p.f);
    }

    /// Constant capillarity: r(.|.) = eps C (rho - rho_bar)(q - q_bar).
    #[test]
    fn constant_capillarity_r_closed_form(
        rho in 0.05..5.0f64, rho_bar in 0.05..5.0f64,
        q in (-10.0..10.0f64, -10.0..10.0f64), qb in (-10.0..10.0f64, -10.0..10.0f64),
        c in 0.01..2.0f64, eps in 0.0..1.0f64,
    ) {
        let p = rel_capillary_point(&CapillarityLaw::Constant(c), eps, rho, [q.0, q.1], rho_bar, [qb.0, qb.1], 2);
        let exact = [eps * c * (rho - rho_bar) * (q.0 - qb.0), eps * c * (rho - rho_bar) * (q.1 - qb.1)];
        prop_assert!((p.r[0] - exact[0]).abs() <= 1e-12 * exact[0].abs().max(1.0));
        prop_assert!((p.r[1] - exact[1]).abs() <= 1e-12 * exact[1].abs().max(1.0));
    }

    /// Parts are non-negative for a convex energy and vanish at coincidence.
    #[test]
    fn relative_energy_parts_nonnegative_and_zero_at_coincidence(
        a in -0.3..0.3f64, b in -0.3..0.3f64, u in -1.0..1.0f64, gamma in 1.2..3.0f64,
    ) {
        let grid = line(32);
        let material = Material::new(EnergyLaw::gamma_law(1.0, gamma).unwrap(), CapillarityLaw::Qhd, 0.1).unwrap();
        let rho = ScalarField::from_fn(&grid, |x| 1.0 + a * (TAU * x[0]).sin());
        let bar = ScalarField::from_fn(&grid, |x| 1.0 + b * (2.0 * TAU * x[0]).cos());
        let m = VectorField::from_fn(&grid, |x| [u * (TAU * x[0]).cos(), 0.0]);
        let s = FluidState::new(rho.clone(), m.clone()).unwrap();
        let r = FluidState::at_rest(bar).unwrap();
        let report = ek_relative_energy(&s, &r, &material).unwrap();
        prop_assert!(report.kinetic >= 0.0 && report.internal_gamma >= 0.0 && report.capillary >= -1e-14);
        prop_assert!((report.total - (report.kinetic + report.internal_gamma + report.internal_bump + report.capillary)).abs() <= 1e-12 * report.total.abs().max(1.0));
        prop_assert!(coincident(&rho, &m, &material).abs() <= 1e-13);
    }
}
