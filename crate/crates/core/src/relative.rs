//! Relative quantities (value minus first-order Taylor expansion about a
//! reference state) and the relative-energy functionals built from them.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::constitutive::{check_vacuum, CapillarityLaw, EnergyLaw, FluidState, Material};
use crate::dynamics::{ch_chemical_potential, ch_rhs, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{ScalarField, TensorField, VectorField};

/// Generic relative quantity `f(x) - f(y) - f'(y)(x - y)`.
pub fn rel_scalar(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, rho: f64, rho_bar: f64) -> f64 {
    f(rho) - f(rho_bar) - df(rho_bar) * (rho - rho_bar)
}

/// `h_gamma(rho | rho_bar)`, evaluated as `c rho_bar^g [r^g - 1 - g (r - 1)]`
/// with `r^g - 1 = expm1(g ln1p(r - 1))` to keep small perturbations accurate.
pub fn rel_h_gamma(law: &EnergyLaw, rho: f64, rho_bar: f64) -> f64 {
    let g = law.gamma;
    if g == 2.0 {
        let d = rho - rho_bar;
        return law.c * d * d;
    }
    if rho_bar == 0.0 {
        return law.h_gamma(rho);
    }
    let x = (rho - rho_bar) / rho_bar;
    let pow_m1 = if rho == 0.0 { -1.0 } else { (g * x.ln_1p()).exp_m1() };
    law.c * rho_bar.powf(g) * (pow_m1 - g * x)
}

/// `e(rho | rho_bar)`; zero when there is no bump.
pub fn rel_e(law: &EnergyLaw, rho: f64, rho_bar: f64) -> f64 {
    law.bump
        .map_or(0.0, |b| rel_scalar(|r| b.e(r), |r| b.de(r), rho, rho_bar))
}

/// `e'(rho | rho_bar) = e'(rho) - e'(rho_bar) - e''(rho_bar)(rho - rho_bar)`.
pub fn rel_de(law: &EnergyLaw, rho: f64, rho_bar: f64) -> f64 {
    law.bump
        .map_or(0.0, |b| rel_scalar(|r| b.de(r), |r| b.d2e(r), rho, rho_bar))
}

fn check_pair(rho: f64, rho_bar: f64) -> Result<()> {
    for v in [rho, rho_bar] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Domain {
                what: "relative energy",
                node: 0,
                value: v,
            });
        }
    }
    Ok(())
}

/// `h(rho | rho_bar) = h_gamma(rho | rho_bar) + e(rho | rho_bar)`.
pub fn rel_h(law: &EnergyLaw, rho: f64, rho_bar: f64) -> Result<f64> {
    check_pair(rho, rho_bar)?;
    Ok(rel_h_gamma(law, rho, rho_bar) + rel_e(law, rho, rho_bar))
}

/// `p(rho | rho_bar)`. The gamma part is `(gamma - 1) h_gamma(rho | rho_bar)`.
pub fn rel_p(law: &EnergyLaw, rho: f64, rho_bar: f64) -> f64 {
    let gamma_part = (law.gamma - 1.0) * rel_h_gamma(law, rho, rho_bar);
    let bump_part = law.bump.map_or(0.0, |b| {
        rel_scalar(|r| b.pressure(r), |r| r * b.d2e(r), rho, rho_bar)
    });
    gamma_part + bump_part
}

/// Scalar coefficient functions of the capillary quantities, as value and derivative.
#[derive(Clone, Copy)]
enum Coefficient {
    /// `kappa`
    Kappa,
    /// `kappa + rho kappa'`
    Sigma,
    /// `rho kappa`
    Phi,
}

fn coefficient(cap: &CapillarityLaw, which: Coefficient, rho: f64) -> [f64; 2] {
    match (cap, which) {
        (CapillarityLaw::Constant(c), Coefficient::Kappa | Coefficient::Sigma) => [*c, 0.0],
        (CapillarityLaw::Constant(c), Coefficient::Phi) => [c * rho, *c],
        (CapillarityLaw::Qhd, Coefficient::Sigma) => [0.0, 0.0],
        (CapillarityLaw::Qhd, Coefficient::Phi) => [1.0, 0.0],
        _ => {
            let [k, dk, d2k] = cap.derivatives(rho);
            match which {
                Coefficient::Kappa => [k, dk],
                Coefficient::Sigma => [k + rho * dk, 2.0 * dk + rho * d2k],
                Coefficient::Phi => [rho * k, k + rho * dk],
            }
        }
    }
}

/// Pieces of `a(rho) G(q)` relative to `(rho_bar, q_bar)` for a coefficient `a`:
/// `(a(rho_bar), a'(rho_bar) (rho - rho_bar), a(rho | rho_bar))`.
fn coefficient_split(cap: &CapillarityLaw, which: Coefficient, rho: f64, rho_bar: f64) -> [f64; 3] {
    let [a, _] = coefficient(cap, which, rho);
    let [ab, dab] = coefficient(cap, which, rho_bar);
    let linear = dab * (rho - rho_bar);
    let remainder = match (cap, which) {
        (CapillarityLaw::Qhd, Coefficient::Kappa) => {
            let d = rho - rho_bar;
            d * d / (rho * rho_bar * rho_bar)
        }
        _ => a - ab - linear,
    };
    [ab, linear, remainder]
}

/// Pointwise relative capillary quantities for one node.
///
/// With `Q = q - q_bar` and the split `a = a_bar + a_bar' (rho - rho_bar) + R_a`:
/// `(a|q|^2/2)(.|.) = [a_bar |Q|^2 + a_bar'(rho - rho_bar)(|q|^2 - |q_bar|^2) + R_a |q|^2] / 2`,
/// `(phi q)(.|.) = R_phi q + phi_bar' (rho - rho_bar) Q`,
/// `(kappa q (x) q)(.|.) = kappa_bar Q (x) Q + kappa_bar'(rho - rho_bar)(q (x) q - q_bar (x) q_bar) + R_kappa q (x) q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapillaryRelativePoint {
    pub f: f64,
    pub s: f64,
    pub r: [f64; 2],
    pub h: [[f64; 2]; 2],
}

pub fn rel_capillary_point(
    cap: &CapillarityLaw,
    eps: f64,
    rho: f64,
    q: [f64; 2],
    rho_bar: f64,
    q_bar: [f64; 2],
    dim: usize,
) -> CapillaryRelativePoint {
    let dq = [q[0] - q_bar[0], q[1] - q_bar[1]];
    let dot = |a: [f64; 2], b: [f64; 2]| (0..dim).map(|i| a[i] * b[i]).sum::<f64>();
    let (q2, qb2, dq2) = (dot(q, q), dot(q_bar, q_bar), dot(dq, dq));
    let quad = |which| {
        let [ab, lin, rem] = coefficient_split(cap, which, rho, rho_bar);
        0.5 * eps * (ab * dq2 + lin * (q2 - qb2) + rem * q2)
    };
    let f = quad(Coefficient::Kappa);
    let s = quad(Coefficient::Sigma);
    let [_, _, phi_rem] = coefficient_split(cap, Coefficient::Phi, rho, rho_bar);
    let [_, dphi_bar] = coefficient(cap, Coefficient::Phi, rho_bar);
    let mut r = [0.0; 2];
    for i in 0..dim {
        r[i] = eps * (phi_rem * q[i] + dphi_bar * (rho - rho_bar) * dq[i]);
    }
    let [kb, k_lin, k_rem] = coefficient_split(cap, Coefficient::Kappa, rho, rho_bar);
    let mut h = [[0.0; 2]; 2];
    for i in 0..dim {
        for j in 0..dim {
            h[i][j] = eps * (kb * dq[i] * dq[j] + k_lin * (q[i] * q[j] - q_bar[i] * q_bar[j]) + k_rem * q[i] * q[j]);
        }
    }
    CapillaryRelativePoint { f, s, r, h }
}

/// Relative capillary fields `F(.|.)`, `s(.|.)`, `r(.|.)`, `H(.|.)` for
/// `F = eps kappa |q|^2/2`, `s = eps (kappa + rho kappa') |q|^2/2`,
/// `r = eps rho kappa q`, `H = eps kappa q (x) q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapillaryRelative {
    pub f: ScalarField,
    pub s: ScalarField,
    pub r: VectorField,
    pub h: TensorField,
}

pub fn rel_capillary(
    rho: &ScalarField,
    grad_rho: &VectorField,
    rho_bar: &ScalarField,
    grad_rho_bar: &VectorField,
    cap: &CapillarityLaw,
    eps: f64,
) -> Result<CapillaryRelative> {
    let grid = rho.grid();
    if grid != rho_bar.grid() || grid != grad_rho.grid() || grid != grad_rho_bar.grid() {
        return Err(Error::GridMismatch("relative capillary quantities"));
    }
    let dim = grid.dim();
    let len = grid.len();
    let mut f = Vec::with_capacity(len);
    let mut s = Vec::with_capacity(len);
    let mut r = vec_of(dim, len);
    let mut h = vec_of(dim * dim, len);
    for n in 0..len {
        let (a, b) = (rho.values()[n], rho_bar.values()[n]);
        check_pair(a, b).map_err(|_| Error::Domain {
            what: "relative capillary quantities",
            node: n,
            value: a.min(b),
        })?;
        let mut q = [0.0; 2];
        let mut qb = [0.0; 2];
        for i in 0..dim {
            q[i] = grad_rho.component(i)[n];
            qb[i] = grad_rho_bar.component(i)[n];
        }
        let p = rel_capillary_point(cap, eps, a, q, b, qb, dim);
        f.push(p.f);
        s.push(p.s);
        for i in 0..dim {
            r[i].push(p.r[i]);
            for j in 0..dim {
                h[i * dim + j].push(p.h[i][j]);
            }
        }
    }
    Ok(CapillaryRelative {
        f: ScalarField::new(grid, f)?,
        s: ScalarField::new(grid, s)?,
        r: VectorField::new(grid, r)?,
        h: TensorField::new(grid, h, false)?,
    })
}

fn vec_of(count: usize, cap: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| Vec::with_capacity(cap)).collect()
}

/// `F(rho, grad rho | rho_bar, grad rho_bar)` only.
pub fn rel_f(
    rho: &ScalarField,
    grad_rho: &VectorField,
    rho_bar: &ScalarField,
    grad_rho_bar: &VectorField,
    cap: &CapillarityLaw,
    eps: f64,
) -> Result<ScalarField> {
    Ok(rel_capillary(rho, grad_rho, rho_bar, grad_rho_bar, cap, eps)?.f)
}

/// Relative kinetic energy `rho |m/rho - m_bar/rho_bar|^2 / 2`.
///
/// The reference density must stay above `floor`; candidate nodes below the
/// floor must carry zero momentum and contribute zero.
pub fn rel_kinetic(state: &FluidState, reference: &FluidState, floor: f64) -> Result<ScalarField> {
    if state.grid() != reference.grid() {
        return Err(Error::GridMismatch("relative kinetic energy"));
    }
    check_vacuum(&reference.rho, floor, f64::NAN)?;
    let u = state.velocity(floor)?;
    let ub = reference.velocity(floor)?;
    let w = &u - &ub;
    Ok(w.norm_sq().zip_map(&state.rho, |w2, r| if r < floor { 0.0 } else { 0.5 * r * w2 }))
}

/// Integrated relative energy split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativeEnergyReport {
    pub time: f64,
    pub kinetic: f64,
    pub internal_gamma: f64,
    pub internal_bump: f64,
    pub capillary: f64,
    pub total: f64,
}

impl RelativeEnergyReport {
    pub fn at(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// `kinetic + internal_gamma + capillary`, the relative energy without the bump.
    pub fn reduced(&self) -> f64 {
        self.kinetic + self.internal_gamma + self.capillary
    }
}

fn check_grids(state: &FluidState, reference: &FluidState) -> Result<()> {
    if state.grid() != reference.grid() {
        Err(Error::GridMismatch("relative energy"))
    } else {
        Ok(())
    }
}

fn internal_parts(energy: &EnergyLaw, rho: &ScalarField, rho_bar: &ScalarField) -> Result<(f64, f64)> {
    let mut gamma = Vec::with_capacity(rho.len());
    let mut bump = Vec::with_capacity(rho.len());
    for (n, (&a, &b)) in rho.values().iter().zip(rho_bar.values()).enumerate() {
        check_pair(a, b).map_err(|_| Error::Domain {
            what: "relative internal energy",
            node: n,
            value: a.min(b),
        })?;
        gamma.push(rel_h_gamma(energy, a, b));
        bump.push(rel_e(energy, a, b));
    }
    let grid = rho.grid();
    Ok((grid.integrate(&gamma)?, grid.integrate(&bump)?))
}

/// Full relative energy `int K(.|.) + h(.|.) + F(.|.)` with the `h_gamma`/`e` split.
pub fn ek_relative_energy(state: &FluidState, reference: &FluidState, material: &Material) -> Result<RelativeEnergyReport> {
    check_grids(state, reference)?;
    let kinetic = rel_kinetic(state, reference, material.vacuum_floor)?.integrate()?;
    let (internal_gamma, internal_bump) = internal_parts(&material.energy, &state.rho, &reference.rho)?;
    let capillary = if material.has_capillarity() {
        let f = rel_f(
            &state.rho,
            &state.rho.gradient()?,
            &reference.rho,
            &reference.rho.gradient()?,
            &material.capillarity,
            material.eps,
        )?;
        f.integrate()?
    } else {
        0.0
    };
    Ok(RelativeEnergyReport {
        time: 0.0,
        kinetic,
        internal_gamma,
        internal_bump,
        capillary,
        total: kinetic + internal_gamma + internal_bump + capillary,
    })
}

/// Reduced functional `int rho|u - u_bar|^2/2 + h_gamma(.|.) + (eps C/2)|grad rho - grad rho_bar|^2`,
/// which leaves out `e(.|.)`. Requires constant capillarity.
pub fn reduced_relative_energy(state: &FluidState, reference: &FluidState, material: &Material) -> Result<f64> {
    if material.capillarity.constant_value().is_none() && material.has_capillarity() {
        return Err(Error::Unsupported(format!(
            "reduced relative energy needs constant capillarity, got {:?}",
            material.capillarity
        )));
    }
    Ok(ek_relative_energy(state, reference, material)?.reduced())
}

/// `int rho|u - u_bar|^2/2 + h(rho|rho_bar) + eps kappa(rho)|grad rho|^2/2` against a
/// capillarity-free reference: the gradient energy is the candidate's own.
pub fn euler_relative_energy(state: &FluidState, reference: &FluidState, material: &Material) -> Result<f64> {
    check_grids(state, reference)?;
    let kinetic = rel_kinetic(state, reference, material.vacuum_floor)?.integrate()?;
    let (gamma, bump) = internal_parts(&material.energy, &state.rho, &reference.rho)?;
    let capillary = if material.has_capillarity() {
        let g2 = state.rho.gradient()?.norm_sq();
        state
            .rho
            .zip_map(&g2, |r, g| 0.5 * material.eps * material.capillarity.kappa(r) * g)
            .integrate()?
    } else {
        0.0
    };
    Ok(kinetic + gamma + bump + capillary)
}

/// Instantaneous or time-integrated right-hand-side terms of the relative
/// energy balance.
///
/// For two smooth solutions of the same system,
/// `d/dt RE = -(convective + div_pressure + hessian_h + grad_div_r + friction_dissipation + defect_e)`
/// and `d/dt int e(.|.) = bump_correction`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RhsTermBreakdown {
    pub time: f64,
    /// `int rho (u - u_bar) (x) (u - u_bar) : grad u_bar`
    pub convective: f64,
    /// `int div u_bar (s(.|.) + p(.|.))`
    pub div_pressure: f64,
    /// `int grad u_bar : H(.|.)`
    pub hessian_h: f64,
    /// `int grad div u_bar . r(.|.)`
    pub grad_div_r: f64,
    /// `-int div m_bar e'(.|.) + int (e''(rho) grad rho - e''(rho_bar) grad rho_bar) . (m - m_bar)`
    pub bump_correction: f64,
    /// `eps^-2 int rho |u - u_bar|^2`
    pub friction_dissipation: f64,
    /// `int E_bar . (rho/rho_bar)(u - u_bar)`
    pub defect_e: f64,
}

impl RhsTermBreakdown {
    /// Sum of the terms that drive the full relative energy.
    pub fn energy_terms(&self) -> f64 {
        self.convective + self.div_pressure + self.hessian_h + self.grad_div_r + self.friction_dissipation + self.defect_e
    }

    fn scaled(&self, a: f64) -> Self {
        Self {
            time: self.time,
            convective: a * self.convective,
            div_pressure: a * self.div_pressure,
            hessian_h: a * self.hessian_h,
            grad_div_r: a * self.grad_div_r,
            bump_correction: a * self.bump_correction,
            friction_dissipation: a * self.friction_dissipation,
            defect_e: a * self.defect_e,
        }
    }

    fn add(&self, o: &Self) -> Self {
        Self {
            time: self.time,
            convective: self.convective + o.convective,
            div_pressure: self.div_pressure + o.div_pressure,
            hessian_h: self.hessian_h + o.hessian_h,
            grad_div_r: self.grad_div_r + o.grad_div_r,
            bump_correction: self.bump_correction + o.bump_correction,
            friction_dissipation: self.friction_dissipation + o.friction_dissipation,
            defect_e: self.defect_e + o.defect_e,
        }
    }
}

/// Instantaneous right-hand-side terms of the relative energy balance between
/// two Euler-Korteweg states with the same material.
pub fn ek_rhs_rates(state: &FluidState, reference: &FluidState, material: &Material) -> Result<RhsTermBreakdown> {
    check_grids(state, reference)?;
    let floor = material.vacuum_floor;
    let grid = state.grid();
    let dim = grid.dim();
    check_vacuum(&reference.rho, floor, f64::NAN)?;
    let u = state.velocity(floor)?;
    let ub = reference.velocity(floor)?;
    let w = &u - &ub;
    let grad_ub = ub.jacobian()?;
    let div_ub = ub.divergence()?;
    let (rho, rho_bar) = (&state.rho, &reference.rho);

    let mut conv = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let gij = grad_ub.component(i, j);
            for n in 0..grid.len() {
                conv += rho.values()[n] * w.component(i)[n] * w.component(j)[n] * gij[n];
            }
        }
    }
    let conv = conv * grid.cell_volume();

    let p_rel: Vec<f64> = rho
        .values()
        .iter()
        .zip(rho_bar.values())
        .map(|(&a, &b)| rel_p(&material.energy, a, b))
        .collect();
    let (mut div_pressure, mut hessian_h, mut grad_div_r) = (0.0, 0.0, 0.0);
    if material.has_capillarity() {
        let cap = rel_capillary(
            rho,
            &rho.gradient()?,
            rho_bar,
            &rho_bar.gradient()?,
            &material.capillarity,
            material.eps,
        )?;
        let grad_div = div_ub.gradient()?;
        for n in 0..grid.len() {
            div_pressure += div_ub.values()[n] * (cap.s.values()[n] + p_rel[n]);
        }
        hessian_h = grad_ub.contract(&cap.h).integrate()?;
        grad_div_r = grad_div.dot(&cap.r).integrate()?;
    } else {
        for n in 0..grid.len() {
            div_pressure += div_ub.values()[n] * p_rel[n];
        }
    }
    let div_pressure = div_pressure * grid.cell_volume();
    let bump_correction = bump_rate(state, reference, &material.energy)?;
    Ok(RhsTermBreakdown {
        time: 0.0,
        convective: conv,
        div_pressure,
        hessian_h,
        grad_div_r,
        bump_correction,
        friction_dissipation: 0.0,
        defect_e: 0.0,
    })
}

/// `d/dt int e(rho|rho_bar)` along two solutions of the continuity equation:
/// `-int div m_bar e'(.|.) + int (e''(rho) grad rho - e''(rho_bar) grad rho_bar) . (m - m_bar)`.
pub fn bump_rate(state: &FluidState, reference: &FluidState, energy: &EnergyLaw) -> Result<f64> {
    let Some(bump) = energy.bump else {
        return Ok(0.0);
    };
    check_grids(state, reference)?;
    let grid = state.grid();
    let (rho, rho_bar) = (&state.rho, &reference.rho);
    let div_mb = reference.m.divergence()?;
    let grad = rho.gradient()?;
    let grad_bar = rho_bar.gradient()?;
    let mut total = 0.0;
    for n in 0..grid.len() {
        let (a, b) = (rho.values()[n], rho_bar.values()[n]);
        total -= div_mb.values()[n] * rel_de(energy, a, b);
        let (ea, eb) = (bump.d2e(a), bump.d2e(b));
        for i in 0..grid.dim() {
            total += (ea * grad.component(i)[n] - eb * grad_bar.component(i)[n])
                * (state.m.component(i)[n] - reference.m.component(i)[n]);
        }
    }
    Ok(total * grid.cell_volume())
}

/// Rates for the friction-rescaled system against a lifted Cahn-Hilliard
/// reference with momentum defect `e_bar`.
pub fn friction_rhs_rates(
    state: &FluidState,
    lifted: &FluidState,
    e_bar: &VectorField,
    energy: &EnergyLaw,
    c_kappa: f64,
    eps: f64,
) -> Result<RhsTermBreakdown> {
    let material = Material::new(*energy, CapillarityLaw::Constant(c_kappa), 1.0)?;
    let mut rates = ek_rhs_rates(state, lifted, &material)?.scaled(1.0 / eps);
    let floor = material.vacuum_floor;
    let w = &state.velocity(floor)? - &lifted.velocity(floor)?;
    let grid = state.grid();
    let (mut diss, mut defect) = (0.0, 0.0);
    for n in 0..grid.len() {
        let (r, rb) = (state.rho.values()[n], lifted.rho.values()[n]);
        for i in 0..grid.dim() {
            let wi = w.component(i)[n];
            diss += r * wi * wi;
            defect += e_bar.component(i)[n] * r / rb * wi;
        }
    }
    rates.friction_dissipation = diss * grid.cell_volume() / (eps * eps);
    rates.defect_e = defect * grid.cell_volume();
    Ok(rates)
}

/// Fails unless both time grids agree to `1e-9` relative.
pub fn check_time_grids(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::TimeGridMismatch(format!("{} vs {} snapshots", a.len(), b.len())));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if (x - y).abs() > 1e-9 * x.abs().max(y.abs()).max(1.0) {
            return Err(Error::TimeGridMismatch(format!("snapshot {i}: t = {x} vs {y}")));
        }
    }
    Ok(())
}

/// Cumulative trapezoid integrals of instantaneous rates over the snapshot times.
pub fn integrate_rates(times: &[f64], rates: &[RhsTermBreakdown]) -> Vec<RhsTermBreakdown> {
    let mut out = Vec::with_capacity(rates.len());
    let mut acc = RhsTermBreakdown::default();
    for (i, r) in rates.iter().enumerate() {
        if i > 0 {
            let dt = times[i] - times[i - 1];
            acc = acc.add(&rates[i - 1].add(r).scaled(0.5 * dt));
        }
        acc.time = times[i];
        out.push(acc);
    }
    out
}

/// Relative energy report at every snapshot of two trajectories on a common time grid.
pub fn relative_energy_series(
    candidate: &Trajectory<FluidState>,
    reference: &Trajectory<FluidState>,
    material: &Material,
) -> Result<Vec<RelativeEnergyReport>> {
    check_time_grids(&candidate.times, &reference.times)?;
    candidate
        .states
        .iter()
        .zip(&reference.states)
        .zip(&candidate.times)
        .map(|((s, r), &t)| Ok(ek_relative_energy(s, r, material)?.at(t)))
        .collect()
}

/// Time-integrated right-hand-side terms at every snapshot (trapezoid in time).
pub fn ek_rhs_terms(
    candidate: &Trajectory<FluidState>,
    reference: &Trajectory<FluidState>,
    material: &Material,
) -> Result<Vec<RhsTermBreakdown>> {
    check_time_grids(&candidate.times, &reference.times)?;
    let rates = candidate
        .states
        .iter()
        .zip(&reference.states)
        .map(|(s, r)| ek_rhs_rates(s, r, material))
        .collect::<Result<Vec<_>>>()?;
    Ok(integrate_rates(&candidate.times, &rates))
}

/// `max_t |RE(t) - RE(0) + int_0^t (sum of terms)|` for two smooth EK
/// trajectories, the defect of the equality form of the relative energy balance.
pub fn relative_identity_residual(
    candidate: &Trajectory<FluidState>,
    reference: &Trajectory<FluidState>,
    material: &Material,
) -> Result<f64> {
    let re = relative_energy_series(candidate, reference, material)?;
    let terms = ek_rhs_terms(candidate, reference, material)?;
    let re0 = re.first().map_or(0.0, |r| r.total);
    Ok(re
        .iter()
        .zip(&terms)
        .map(|(r, t)| (r.total - re0 + t.energy_terms()).abs())
        .fold(0.0, f64::max))
}

/// `max_t |int e(.|.)(t) - int e(.|.)(0) - int_0^t bump_rate|`, the defect of
/// the bump identity. Exactly zero without a bump.
pub fn bump_identity_residual(
    candidate: &Trajectory<FluidState>,
    reference: &Trajectory<FluidState>,
    energy: &EnergyLaw,
) -> Result<f64> {
    check_time_grids(&candidate.times, &reference.times)?;
    if energy.bump.is_none() {
        return Ok(0.0);
    }
    let mut e_rel = Vec::with_capacity(candidate.len());
    let mut rates = Vec::with_capacity(candidate.len());
    for (s, r) in candidate.states.iter().zip(&reference.states) {
        let (_, bump) = internal_parts(energy, &s.rho, &r.rho)?;
        e_rel.push(bump);
        rates.push(RhsTermBreakdown {
            bump_correction: bump_rate(s, r, energy)?,
            ..Default::default()
        });
    }
    let integrals = integrate_rates(&candidate.times, &rates);
    Ok(e_rel
        .iter()
        .zip(&integrals)
        .map(|(e, i)| (e - e_rel[0] - i.bump_correction).abs())
        .fold(0.0, f64::max))
}

/// How the lift's time derivative `m_bar_t` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftTimeDerivative {
    /// Chain rule through `rho_bar_t = ch_rhs(rho_bar)`: exact for the semi-discrete flow.
    Analytic,
    /// Second-order centered differences over the snapshots (one-sided at the ends).
    Centered,
}

/// Momentum lift `m_bar`, its defect `E_bar` and their max norms per snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChLift {
    pub times: Vec<f64>,
    pub m_bar: Vec<VectorField>,
    pub e_bar: Vec<VectorField>,
    pub m_bar_max: Vec<f64>,
    pub e_bar_max: Vec<f64>,
}

impl ChLift {
    /// The lifted pairs `(rho_bar, m_bar)` as a trajectory.
    pub fn lifted_trajectory(&self, ch: &Trajectory<ScalarField>, energy: &EnergyLaw, c_kappa: f64) -> Result<Trajectory<FluidState>> {
        let mut out = Trajectory::new(ch.dt);
        for ((t, rho), (m, d)) in ch.times.iter().zip(&ch.states).zip(self.m_bar.iter().zip(&ch.diagnostics)) {
            let state = FluidState::new(rho.clone(), m.clone())?;
            let material = Material::new(*energy, CapillarityLaw::Constant(c_kappa), 1.0)?;
            let mut diag = *d;
            diag.energy = material.total_energy(&state)?;
            diag.momentum = state.momentum()?;
            out.push(*t, state, diag);
        }
        Ok(out)
    }

    pub fn e_bar_sup(&self) -> f64 {
        self.e_bar_max.iter().copied().fold(0.0, f64::max)
    }
}

/// `m_bar = -eps rho_bar grad(h'(rho_bar) - C_kappa lap rho_bar)`.
pub fn lift_momentum(rho_bar: &ScalarField, energy: &EnergyLaw, c_kappa: f64, eps: f64) -> Result<VectorField> {
    let mu = ch_chemical_potential(rho_bar, energy, c_kappa)?;
    Ok(mu.gradient()?.zip_scalar(rho_bar, |g, r| -eps * r * g))
}

/// Well-prepared state `(rho_bar, m_bar)` for the friction system.
pub fn lift_state(rho_bar: &ScalarField, energy: &EnergyLaw, c_kappa: f64, eps: f64) -> Result<FluidState> {
    FluidState::new(rho_bar.clone(), lift_momentum(rho_bar, energy, c_kappa, eps)?)
}

/// Lifts a Cahn-Hilliard trajectory to the friction system and computes the
/// exact momentum defect
/// `E_bar = m_bar_t + div(m_bar (x) m_bar / rho_bar)/eps + m_bar/eps^2 + rho_bar grad mu_bar / eps`.
pub fn ch_lift(
    ch: &Trajectory<ScalarField>,
    energy: &EnergyLaw,
    c_kappa: f64,
    eps: f64,
    floor: f64,
    derivative: LiftTimeDerivative,
) -> Result<ChLift> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("friction scale eps = {eps} must be positive")));
    }
    for (rho, &t) in ch.states.iter().zip(&ch.times) {
        check_vacuum(rho, floor, t)?;
    }
    let m_bar = ch
        .states
        .iter()
        .map(|r| lift_momentum(r, energy, c_kappa, eps))
        .collect::<Result<Vec<_>>>()?;
    let m_t: Vec<VectorField> = match derivative {
        LiftTimeDerivative::Analytic => ch
            .states
            .iter()
            .map(|r| lift_time_derivative(r, energy, c_kappa, eps))
            .collect::<Result<_>>()?,
        LiftTimeDerivative::Centered => centered_derivative(&ch.times, &m_bar)?,
    };
    let mut e_bar = Vec::with_capacity(m_bar.len());
    for ((rho, m), mt) in ch.states.iter().zip(&m_bar).zip(&m_t) {
        let mu = ch_chemical_potential(rho, energy, c_kappa)?;
        let force = mu.gradient()?.zip_scalar(rho, |g, r| r * g);
        let u = m.zip_scalar(rho, |m, r| m / r);
        let flux = TensorField::outer(m, &u).divergence()?;
        let inv = 1.0 / eps;
        let comps = (0..m.dim())
            .map(|i| {
                (0..rho.len())
                    .map(|n| {
                        mt.component(i)[n]
                            + inv * flux.component(i)[n]
                            + inv * inv * m.component(i)[n]
                            + inv * force.component(i)[n]
                    })
                    .collect()
            })
            .collect();
        e_bar.push(VectorField::new(rho.grid(), comps)?);
    }
    Ok(ChLift {
        times: ch.times.clone(),
        m_bar_max: m_bar.iter().map(VectorField::max_abs).collect(),
        e_bar_max: e_bar.iter().map(VectorField::max_abs).collect(),
        m_bar,
        e_bar,
    })
}

/// `m_bar_t = -eps (rho_t grad mu + rho grad mu_t)`, `mu_t = h''(rho) rho_t - C_kappa lap rho_t`.
fn lift_time_derivative(rho: &ScalarField, energy: &EnergyLaw, c_kappa: f64, eps: f64) -> Result<VectorField> {
    let rho_t = ch_rhs(rho, energy, c_kappa)?;
    let mu = ch_chemical_potential(rho, energy, c_kappa)?;
    let lap_t = rho_t.div_grad()?;
    let mu_t = rho
        .zip_map(&rho_t, |r, rt| energy.d2h(r) * rt)
        .zip_map(&lap_t, |a, l| a - c_kappa * l);
    let a = mu.gradient()?.zip_scalar(&rho_t, |g, rt| rt * g);
    let b = mu_t.gradient()?.zip_scalar(rho, |g, r| r * g);
    Ok((&a + &b).scale(-eps))
}

fn centered_derivative(times: &[f64], fields: &[VectorField]) -> Result<Vec<VectorField>> {
    let n = fields.len();
    if n < 3 {
        return Err(Error::Coverage(format!("centered time differences need 3 snapshots, got {n}")));
    }
    let h = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h {
            return Err(Error::TimeGridMismatch(String::from("centered differences need uniform snapshot spacing")));
        }
    }
    let comb = |terms: &[(f64, usize)]| -> VectorField {
        let mut acc = fields[terms[0].1].scale(terms[0].0);
        for &(c, i) in &terms[1..] {
            acc = &acc + &fields[i].scale(c);
        }
        acc
    };
    let mut out = Vec::with_capacity(n);
    out.push(comb(&[(-1.5 / h, 0), (2.0 / h, 1), (-0.5 / h, 2)]));
    for i in 1..n - 1 {
        out.push(comb(&[(-0.5 / h, i - 1), (0.5 / h, i + 1)]));
    }
    out.push(comb(&[(0.5 / h, n - 3), (-2.0 / h, n - 2), (1.5 / h, n - 1)]));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::BumpSpec;
    use crate::grid::TorusGrid;
    use core::f64::consts::TAU;

    #[test]
    fn rel_scalar_examples() {
        let law = EnergyLaw::gamma_law(1.0, 2.0).unwrap();
        assert_eq!(rel_h(&law, 1.3, 1.3).unwrap(), 0.0);
        assert!((rel_h(&law, 1.7, 1.2).unwrap() - 0.25).abs() < 1e-15);
        assert!(rel_h(&law, -1.0, 1.0).is_err());
        let law = EnergyLaw::gamma_law(1.0, 1.5).unwrap();
        let generic = rel_scalar(|r| law.h(r), |r| law.dh(r), 2.0, 1.0);
        assert!((rel_h_gamma(&law, 2.0, 1.0) - generic).abs() < 1e-14);
    }

    #[test]
    fn split_is_exact() {
        let law = EnergyLaw::new(1.0, 1.5, Some(BumpSpec::new(-0.1, 0.5, 1.5).unwrap())).unwrap();
        let (a, b) = (1.1, 0.95);
        assert_eq!(rel_h(&law, a, b).unwrap(), rel_h_gamma(&law, a, b) + rel_e(&law, a, b));
    }

    #[test]
    fn constant_capillarity_closed_forms() {
        let cap = CapillarityLaw::Constant(0.7);
        let eps = 0.3;
        let (rho, rb) = (1.2, 0.9);
        let (q, qb) = ([0.4, -0.2], [0.1, 0.5]);
        let p = rel_capillary_point(&cap, eps, rho, q, rb, qb, 2);
        let dq = [q[0] - qb[0], q[1] - qb[1]];
        let dq2 = dq[0] * dq[0] + dq[1] * dq[1];
        assert!((p.f - 0.5 * eps * 0.7 * dq2).abs() < 1e-15);
        assert!((p.s - 0.5 * eps * 0.7 * dq2).abs() < 1e-15);
        for i in 0..2 {
            assert!((p.r[i] - eps * 0.7 * (rho - rb) * dq[i]).abs() < 1e-15);
            for j in 0..2 {
                assert!((p.h[i][j] - eps * 0.7 * dq[i] * dq[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn coincident_states_give_zero() {
        let g = TorusGrid::unit(1, 32).unwrap();
        let rho = ScalarField::from_fn(&g, |x| 1.0 + 0.2 * (TAU * x[0]).sin());
        let state = FluidState::from_velocity(rho, &VectorField::from_fn(&g, |x| [(TAU * x[0]).cos(), 0.0])).unwrap();
        let mat = Material::new(
            EnergyLaw::new(1.0, 1.4, Some(BumpSpec::new(-0.1, 0.5, 1.5).unwrap())).unwrap(),
            CapillarityLaw::Qhd,
            0.5,
        )
        .unwrap();
        let r = ek_relative_energy(&state, &state, &mat).unwrap();
        assert_eq!(r.total, 0.0);
        let rates = ek_rhs_rates(&state, &state, &mat).unwrap();
        assert_eq!(rates.energy_terms() + rates.bump_correction, 0.0);
    }

    #[test]
    fn reduced_requires_constant_capillarity() {
        let g = TorusGrid::unit(1, 16).unwrap();
        let s = FluidState::at_rest(ScalarField::constant(&g, 1.0)).unwrap();
        let mat = Material::new(EnergyLaw::gamma_law(1.0, 2.0).unwrap(), CapillarityLaw::Qhd, 1.0).unwrap();
        assert!(matches!(reduced_relative_energy(&s, &s, &mat), Err(Error::Unsupported(_))));
    }

    #[test]
    fn mismatched_time_grids_are_rejected() {
        assert!(check_time_grids(&[0.0, 0.1], &[0.0, 0.1]).is_ok());
        assert!(matches!(check_time_grids(&[0.0, 0.1], &[0.0, 0.2]), Err(Error::TimeGridMismatch(_))));
        assert!(check_time_grids(&[0.0], &[0.0, 0.1]).is_err());
    }
}
