//! Energy densities, pressure, capillarity laws, the Korteweg stress and the
//! total energy of a fluid state.

use alloc::format;
use alloc::vec::Vec;

// Float supplies libm-backed math on toolchains without core float methods.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TensorField, TorusGrid, VectorField};

/// Default hard floor on the density used by solvers and diagnostics.
pub const DEFAULT_VACUUM_FLOOR: f64 = 1e-8;

/// Smooth compactly supported bump `e(rho) = A exp(-1/(1-s^2))` with
/// `s = (2 rho - (lo + hi)) / (hi - lo)` on `|s| < 1` and zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpSpec {
    pub amplitude: f64,
    pub support_lo: f64,
    pub support_hi: f64,
}

impl BumpSpec {
    pub fn new(amplitude: f64, support_lo: f64, support_hi: f64) -> Result<Self> {
        if !(amplitude.is_finite() && support_lo > 0.0 && support_hi > support_lo && support_hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bump needs finite amplitude and 0 < lo < hi, got A={amplitude}, [{support_lo}, {support_hi}]"
            )));
        }
        Ok(Self {
            amplitude,
            support_lo,
            support_hi,
        })
    }

    fn slope(&self) -> f64 {
        2.0 / (self.support_hi - self.support_lo)
    }

    /// Returns `(s, w = 1 - s^2)` if `rho` lies strictly inside the support.
    fn local(&self, rho: f64) -> Option<(f64, f64)> {
        let s = (2.0 * rho - (self.support_lo + self.support_hi)) / (self.support_hi - self.support_lo);
        let w = 1.0 - s * s;
        (w > 0.0).then_some((s, w))
    }

    /// Value and first three derivatives of the bump in `rho`.
    pub fn derivatives(&self, rho: f64) -> [f64; 4] {
        let Some((s, w)) = self.local(rho) else {
            return [0.0; 4];
        };
        // g(s) = exp(-1/w), g' = q g, g'' = (q' + q^2) g, g''' = (q'' + 3 q q' + q^3) g
        let g = (-1.0 / w).exp();
        let (w2, w3, w4) = (w * w, w * w * w, w * w * w * w);
        let q = -2.0 * s / w2;
        let dq = -2.0 / w2 - 8.0 * s * s / w3;
        let d2q = -24.0 * s / w3 - 48.0 * s * s * s / w4;
        let a = self.slope();
        let amp = self.amplitude;
        [
            amp * g,
            amp * a * q * g,
            amp * a * a * (dq + q * q) * g,
            amp * a * a * a * (d2q + 3.0 * q * dq + q * q * q) * g,
        ]
    }

    pub fn e(&self, rho: f64) -> f64 {
        self.derivatives(rho)[0]
    }

    pub fn de(&self, rho: f64) -> f64 {
        self.derivatives(rho)[1]
    }

    pub fn d2e(&self, rho: f64) -> f64 {
        self.derivatives(rho)[2]
    }

    /// Bump pressure `p_e = rho e' - e`.
    pub fn pressure(&self, rho: f64) -> f64 {
        let [e, de, ..] = self.derivatives(rho);
        rho * de - e
    }

    pub fn contains(&self, rho: f64) -> bool {
        self.local(rho).is_some()
    }
}

/// Internal energy density `h(rho) = c rho^gamma + e(rho)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyLaw {
    pub c: f64,
    pub gamma: f64,
    pub bump: Option<BumpSpec>,
}

/// Where the energy density fails to be convex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityReport {
    /// Minimum of `h''` over the sampled bump support.
    pub min_d2h: f64,
    /// Density at which the minimum is attained.
    pub argmin: f64,
    /// Sampled sub-interval on which `h'' < 0`, if any.
    pub elliptic_region: Option<(f64, f64)>,
}

impl EnergyLaw {
    pub fn new(c: f64, gamma: f64, bump: Option<BumpSpec>) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma-law coefficient c = {c} must be positive")));
        }
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma = {gamma} must exceed 1")));
        }
        Ok(Self { c, gamma, bump })
    }

    /// Pure gamma law without a bump.
    pub fn gamma_law(c: f64, gamma: f64) -> Result<Self> {
        Self::new(c, gamma, None)
    }

    /// The same law with the bump removed.
    pub fn convex_part(&self) -> Self {
        Self { bump: None, ..*self }
    }

    fn bump_d(&self, rho: f64) -> [f64; 4] {
        self.bump.map_or([0.0; 4], |b| b.derivatives(rho))
    }

    pub fn h_gamma(&self, rho: f64) -> f64 {
        self.c * rho.powf(self.gamma)
    }

    pub fn dh_gamma(&self, rho: f64) -> f64 {
        if rho == 0.0 {
            return 0.0;
        }
        self.c * self.gamma * rho.powf(self.gamma - 1.0)
    }

    pub fn d2h_gamma(&self, rho: f64) -> f64 {
        self.c * self.gamma * (self.gamma - 1.0) * rho.powf(self.gamma - 2.0)
    }

    pub fn h(&self, rho: f64) -> f64 {
        self.h_gamma(rho) + self.bump_d(rho)[0]
    }

    pub fn dh(&self, rho: f64) -> f64 {
        self.dh_gamma(rho) + self.bump_d(rho)[1]
    }

    pub fn d2h(&self, rho: f64) -> f64 {
        self.d2h_gamma(rho) + self.bump_d(rho)[2]
    }

    /// `p = rho h' - h`.
    pub fn p(&self, rho: f64) -> f64 {
        (self.gamma - 1.0) * self.h_gamma(rho) + self.bump.map_or(0.0, |b| b.pressure(rho))
    }

    /// `p' = rho h''`.
    pub fn dp(&self, rho: f64) -> f64 {
        rho * self.d2h(rho)
    }

    /// Checked `h(rho)`.
    pub fn energy_density(&self, rho: f64) -> Result<f64> {
        check_density(rho, "energy density")?;
        Ok(self.h(rho))
    }

    /// Checked `p(rho)`.
    pub fn pressure(&self, rho: f64) -> Result<f64> {
        check_density(rho, "pressure")?;
        Ok(self.p(rho))
    }

    /// Samples `h''` across the bump support and locates the elliptic region.
    pub fn convexity(&self, samples: usize) -> Option<ConvexityReport> {
        let bump = self.bump?;
        let samples = samples.max(3);
        let (lo, hi) = (bump.support_lo, bump.support_hi);
        let mut report = ConvexityReport {
            min_d2h: f64::INFINITY,
            argmin: lo,
            elliptic_region: None,
        };
        for i in 1..samples {
            let rho = lo + (hi - lo) * i as f64 / samples as f64;
            let d2 = self.d2h(rho);
            if d2 < report.min_d2h {
                report.min_d2h = d2;
                report.argmin = rho;
            }
            if d2 < 0.0 {
                report.elliptic_region = Some(match report.elliptic_region {
                    None => (rho, rho),
                    Some((a, _)) => (a, rho),
                });
            }
        }
        Some(report)
    }
}

fn check_density(rho: f64, what: &'static str) -> Result<()> {
    if rho >= 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { what, node: 0, value: rho })
    }
}

/// Capillarity coefficient `kappa(rho)`.
#[derive(Debug, Clone, Copy)]
pub enum CapillarityLaw {
    /// `kappa = C_kappa`.
    Constant(f64),
    /// Quantum hydrodynamics, `kappa = 1/rho`.
    Qhd,
    /// `kappa = coefficient * rho^exponent`.
    Power { coefficient: f64, exponent: f64 },
    /// Closed-form evaluators for `kappa`, `kappa'`, `kappa''`.
    Custom {
        kappa: fn(f64) -> f64,
        dkappa: fn(f64) -> f64,
        d2kappa: fn(f64) -> f64,
    },
}

impl CapillarityLaw {
    /// `(kappa, kappa', kappa'')` at `rho`.
    pub fn derivatives(&self, rho: f64) -> [f64; 3] {
        match *self {
            Self::Constant(c) => [c, 0.0, 0.0],
            Self::Qhd => {
                let inv = 1.0 / rho;
                [inv, -inv * inv, 2.0 * inv * inv * inv]
            }
            Self::Power { coefficient, exponent } => [
                coefficient * rho.powf(exponent),
                coefficient * exponent * rho.powf(exponent - 1.0),
                coefficient * exponent * (exponent - 1.0) * rho.powf(exponent - 2.0),
            ],
            Self::Custom { kappa, dkappa, d2kappa } => [kappa(rho), dkappa(rho), d2kappa(rho)],
        }
    }

    pub fn kappa(&self, rho: f64) -> f64 {
        self.derivatives(rho)[0]
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Self::Constant(c) => Some(c),
            Self::Power { coefficient, exponent } if exponent == 0.0 => Some(coefficient),
            _ => None,
        }
    }

    /// Whether `kappa` blows up as `rho -> 0`.
    pub fn singular_at_vacuum(&self) -> bool {
        match *self {
            Self::Constant(_) => false,
            Self::Qhd => true,
            Self::Power { exponent, .. } => exponent < 0.0,
            Self::Custom { .. } => true,
        }
    }
}

/// Outcome of [`set2_check`] with the worst-case margins found.
#[derive(Debug, Clone, PartialEq)]
pub struct Set2Verdict {
    /// `min kappa kappa'' - 2 kappa'^2` over the samples.
    pub hessian_margin: f64,
    /// `max |kappa kappa''| + 2 kappa'^2`, the scale for judging the margin.
    pub hessian_scale: f64,
    /// Smallest `C` with `rho^2 kappa <= C (h + rho)` on the samples.
    pub growth_constant: f64,
    /// Smallest `C` with `|rho kappa'| <= C kappa` on the samples.
    pub derivative_constant: f64,
    /// `true` when a sampled constant keeps growing at an unbounded end of the range.
    pub unbounded: bool,
    pub passed: bool,
    /// First failing clause, if any.
    pub failure: Option<Set2Failure>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Set2Failure {
    NonPositiveKappa { rho: f64, kappa: f64 },
    Hessian { rho: f64, margin: f64 },
    UnboundedGrowth { clause: &'static str },
}

/// Relative tolerance of the Hessian clause (margins down to `-1e-12 * scale` pass).
pub const SET2_HESSIAN_TOL: f64 = 1e-12;

/// Samples the Set2 admissibility conditions on `[lo, hi]`.
///
/// Infinite or zero endpoints are replaced by `1e12` / `1e-12` and sampled
/// geometrically; a constant whose running maximum is still increasing at such
/// an endpoint is reported unbounded and fails.
pub fn set2_check(cap: &CapillarityLaw, energy: &EnergyLaw, rho_range: (f64, f64), samples: usize) -> Result<Set2Verdict> {
    let (lo, hi) = rho_range;
    if !(lo >= 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!("density range [{lo}, {hi}] must lie in [0, inf)")));
    }
    let open_lo = lo <= 0.0;
    let open_hi = !hi.is_finite();
    let a = if open_lo { 1e-12 } else { lo };
    let b = if open_hi { 1e12 } else { hi };
    let samples = samples.max(2);
    let geometric = open_lo || open_hi || b / a > 1e3;
    let rhos: Vec<f64> = (0..samples)
        .map(|i| {
            let t = i as f64 / (samples - 1) as f64;
            if geometric {
                a * (b / a).powf(t)
            } else {
                a + (b - a) * t
            }
        })
        .collect();

    let mut verdict = Set2Verdict {
        hessian_margin: f64::INFINITY,
        hessian_scale: 0.0,
        growth_constant: 0.0,
        derivative_constant: 0.0,
        unbounded: false,
        passed: true,
        failure: None,
    };
    let mut growth = Vec::with_capacity(samples);
    let mut deriv = Vec::with_capacity(samples);
    for &rho in &rhos {
        let [k, dk, d2k] = cap.derivatives(rho);
        if !(k > 0.0) || !k.is_finite() {
            verdict.passed = false;
            verdict.failure = Some(Set2Failure::NonPositiveKappa { rho, kappa: k });
            return Ok(verdict);
        }
        let margin = k * d2k - 2.0 * dk * dk;
        let scale = (k * d2k).abs() + 2.0 * dk * dk;
        verdict.hessian_scale = verdict.hessian_scale.max(scale);
        if margin < verdict.hessian_margin {
            verdict.hessian_margin = margin;
            if margin < -SET2_HESSIAN_TOL * scale && verdict.failure.is_none() {
                verdict.failure = Some(Set2Failure::Hessian { rho, margin });
            }
        }
        growth.push(rho * rho * k / (energy.h(rho) + rho));
        deriv.push((rho * dk).abs() / k);
    }
    verdict.growth_constant = growth.iter().copied().fold(0.0, f64::max);
    verdict.derivative_constant = deriv.iter().copied().fold(0.0, f64::max);

    let still_growing = |vals: &[f64], at_end: bool| -> bool {
        let n = vals.len();
        let (inner, edge) = if at_end { (vals[n - 2], vals[n - 1]) } else { (vals[1], vals[0]) };
        let max = vals.iter().copied().fold(0.0, f64::max);
        edge >= max && edge > inner * (1.0 + 1e-6)
    };
    for (vals, clause) in [(&growth, "rho^2 kappa <= C (h + rho)"), (&deriv, "|rho kappa'| <= C kappa")] {
        if (open_hi && still_growing(vals, true)) || (open_lo && still_growing(vals, false)) {
            verdict.unbounded = true;
            if verdict.failure.is_none() {
                verdict.failure = Some(Set2Failure::UnboundedGrowth { clause });
            }
        }
    }
    verdict.passed = verdict.failure.is_none();
    Ok(verdict)
}

/// Density/momentum pair on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub rho: ScalarField,
    pub m: VectorField,
}

impl FluidState {
    pub fn new(rho: ScalarField, m: VectorField) -> Result<Self> {
        if rho.grid() != m.grid() {
            return Err(Error::GridMismatch("fluid state"));
        }
        rho.check_finite()?;
        m.check_finite()?;
        let (node, min) = rho.argmin();
        if min < 0.0 {
            return Err(Error::Domain {
                what: "fluid state",
                node,
                value: min,
            });
        }
        Ok(Self { rho, m })
    }

    /// State at rest with the given density.
    pub fn at_rest(rho: ScalarField) -> Result<Self> {
        let m = VectorField::zeros(rho.grid());
        Self::new(rho, m)
    }

    /// State from density and velocity, `m = rho u`.
    pub fn from_velocity(rho: ScalarField, u: &VectorField) -> Result<Self> {
        let m = u.zip_scalar(&rho, |u, r| u * r);
        Self::new(rho, m)
    }

    pub fn grid(&self) -> &TorusGrid {
        self.rho.grid()
    }

    pub fn mass(&self) -> Result<f64> {
        self.rho.integrate()
    }

    pub fn momentum(&self) -> Result<[f64; 2]> {
        self.m.integrate()
    }

    /// Velocity `m / rho`, zero where the density is below `floor` and the
    /// momentum vanishes there.
    pub fn velocity(&self, floor: f64) -> Result<VectorField> {
        self.check_kinetic(floor)?;
        Ok(self
            .m
            .zip_scalar(&self.rho, |m, r| if r < floor { 0.0 } else { m / r }))
    }

    /// Fails when the momentum is nonzero below the vacuum floor.
    pub fn check_kinetic(&self, floor: f64) -> Result<()> {
        for (node, &r) in self.rho.values().iter().enumerate() {
            if r < floor {
                for c in self.m.components() {
                    if c[node] != 0.0 {
                        return Err(Error::KineticUndefined { node, momentum: c[node] });
                    }
                }
            }
        }
        Ok(())
    }

    /// Kinetic energy density `|m|^2 / (2 rho)` with the vacuum convention.
    pub fn kinetic_density(&self, floor: f64) -> Result<ScalarField> {
        self.check_kinetic(floor)?;
        let m2 = self.m.norm_sq();
        Ok(m2.zip_map(&self.rho, |m2, r| if r < floor { 0.0 } else { 0.5 * m2 / r }))
    }

    /// Fails with [`Error::Vacuum`] if `min rho < floor`.
    pub fn check_vacuum(&self, floor: f64, time: f64) -> Result<()> {
        check_vacuum(&self.rho, floor, time)
    }
}

pub(crate) fn check_vacuum(rho: &ScalarField, floor: f64, time: f64) -> Result<()> {
    let (node, min) = rho.argmin();
    if min < floor {
        Err(Error::Vacuum {
            min_rho: min,
            node,
            floor,
            time,
        })
    } else {
        Ok(())
    }
}

/// Energy law, capillarity law and capillarity scale `eps` (`kappa -> eps kappa`).
///
/// `eps = 1` is the plain Euler-Korteweg system; `eps = 0` is compressible Euler.
#[derive(Debug, Clone, Copy)]
pub struct Material {
    pub energy: EnergyLaw,
    pub capillarity: CapillarityLaw,
    pub eps: f64,
    pub vacuum_floor: f64,
}

impl Material {
    pub fn new(energy: EnergyLaw, capillarity: CapillarityLaw, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("capillarity scale eps = {eps} must be >= 0")));
        }
        Ok(Self {
            energy,
            capillarity,
            eps,
            vacuum_floor: DEFAULT_VACUUM_FLOOR,
        })
    }

    pub fn with_vacuum_floor(mut self, floor: f64) -> Self {
        self.vacuum_floor = floor;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    /// Euler material (no capillarity).
    pub fn euler(energy: EnergyLaw) -> Self {
        Self {
            energy,
            capillarity: CapillarityLaw::Constant(0.0),
            eps: 0.0,
            vacuum_floor: DEFAULT_VACUUM_FLOOR,
        }
    }

    pub fn has_capillarity(&self) -> bool {
        self.eps != 0.0 && self.capillarity.constant_value() != Some(0.0)
    }

    fn check_singular(&self, rho: &ScalarField) -> Result<()> {
        if self.has_capillarity() && self.capillarity.singular_at_vacuum() {
            check_vacuum(rho, self.vacuum_floor, f64::NAN)?;
        }
        let (node, min) = rho.argmin();
        if min < 0.0 {
            return Err(Error::Domain {
                what: "energy density",
                node,
                value: min,
            });
        }
        Ok(())
    }

    /// Chemical potential `mu = h'(rho) + (eps kappa'/2)|grad rho|^2 - eps div(kappa grad rho)`.
    ///
    /// The divergence is taken of the spectral gradient, which makes `mu` the
    /// exact variational derivative of the discrete total energy.
    pub fn variational_derivative(&self, rho: &ScalarField) -> Result<ScalarField> {
        self.check_singular(rho)?;
        let dh = rho.map(|r| self.energy.dh(r));
        if !self.has_capillarity() {
            return Ok(dh);
        }
        let eps = self.eps;
        let grad = rho.gradient()?;
        let g2 = grad.norm_sq();
        let kd: Vec<[f64; 3]> = rho.values().iter().map(|&r| self.capillarity.derivatives(r)).collect();
        let flux = VectorField::from_raw(
            rho.grid(),
            grad.components()
                .iter()
                .map(|c| c.iter().zip(&kd).map(|(g, k)| k[0] * g).collect())
                .collect(),
        );
        let div = flux.divergence()?;
        let values = dh
            .values()
            .iter()
            .zip(g2.values())
            .zip(div.values())
            .zip(&kd)
            .map(|(((dh, g2), div), k)| dh + 0.5 * eps * k[1] * g2 - eps * div)
            .collect();
        Ok(ScalarField::from_raw(rho.grid(), values))
    }

    /// Korteweg stress
    /// `S = [-p - (eps/2)(rho kappa' + kappa)|grad rho|^2 + eps div(rho kappa grad rho)] I - eps kappa grad rho (x) grad rho`.
    pub fn korteweg_stress(&self, state: &FluidState) -> Result<TensorField> {
        let rho = &state.rho;
        self.check_singular(rho)?;
        let p = rho.map(|r| self.energy.p(r));
        if !self.has_capillarity() {
            return Ok(TensorField::isotropic(&(-&p)));
        }
        let eps = self.eps;
        let grad = rho.gradient()?;
        let g2 = grad.norm_sq();
        let kd: Vec<[f64; 3]> = rho.values().iter().map(|&r| self.capillarity.derivatives(r)).collect();
        let rk: Vec<f64> = rho.values().iter().zip(&kd).map(|(r, k)| r * k[0]).collect();
        let flux = VectorField::from_raw(
            rho.grid(),
            grad.components()
                .iter()
                .map(|c| c.iter().zip(&rk).map(|(g, rk)| rk * g).collect())
                .collect(),
        );
        let div = flux.divergence()?;
        let iso: Vec<f64> = (0..rho.len())
            .map(|i| {
                let r = rho.values()[i];
                let k = kd[i];
                -p.values()[i] - 0.5 * eps * (r * k[1] + k[0]) * g2.values()[i] + eps * div.values()[i]
            })
            .collect();
        let iso = TensorField::isotropic(&ScalarField::from_raw(rho.grid(), iso));
        let kappa = ScalarField::from_raw(rho.grid(), kd.iter().map(|k| eps * k[0]).collect());
        let aniso = TensorField::outer(&grad, &grad).scale_by(&kappa);
        Ok(&iso - &aniso)
    }

    /// Pointwise energy density `|m|^2/(2 rho) + h(rho) + (eps kappa/2)|grad rho|^2`.
    pub fn energy_density_field(&self, state: &FluidState) -> Result<ScalarField> {
        self.check_singular(&state.rho)?;
        let kinetic = state.kinetic_density(self.vacuum_floor)?;
        let mut out = kinetic.zip_map(&state.rho, |k, r| k + self.energy.h(r));
        if self.has_capillarity() {
            let g2 = state.rho.gradient()?.norm_sq();
            for ((o, g2), r) in out.values_mut().iter_mut().zip(g2.values()).zip(state.rho.values()) {
                *o += 0.5 * self.eps * self.capillarity.kappa(*r) * g2;
            }
        }
        Ok(out)
    }

    /// Total energy `int |m|^2/(2 rho) + h(rho) + (eps kappa/2)|grad rho|^2 dx`.
    pub fn total_energy(&self, state: &FluidState) -> Result<f64> {
        self.energy_density_field(state)?.integrate()
    }

    /// Energy without the kinetic part, as a functional of density only.
    pub fn potential_energy(&self, rho: &ScalarField) -> Result<f64> {
        self.total_energy(&FluidState::at_rest(rho.clone())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump() -> BumpSpec {
        BumpSpec::new(-0.2, 0.8, 1.4).unwrap()
    }

    #[test]
    fn bump_vanishes_outside_support() {
        let b = bump();
        for rho in [0.0, 0.5, 0.8, 1.4, 2.0, 10.0] {
            assert_eq!(b.derivatives(rho), [0.0; 4]);
        }
        assert!(b.e(1.1) < 0.0);
    }

    #[test]
    fn bump_derivatives_match_central_differences() {
        let b = bump();
        let step = 1e-5;
        // interior of the support; at the edges the higher derivatives swamp a 1e-5 stencil
        for i in 4..=36 {
            let rho = 0.8 + 0.6 * i as f64 / 40.0;
            let d = b.derivatives(rho);
            let dp = b.derivatives(rho + step);
            let dm = b.derivatives(rho - step);
            for k in 0..3 {
                let fd = (dp[k] - dm[k]) / (2.0 * step);
                let scale = d[k + 1].abs().max(1e-3 * b.amplitude.abs());
                assert!((fd - d[k + 1]).abs() <= 1e-6 * scale.max(1.0), "order {k} at {rho}: {fd} vs {}", d[k + 1]);
            }
        }
    }

    #[test]
    fn energy_density_examples() {
        let law = EnergyLaw::gamma_law(1.0, 2.0).unwrap();
        assert_eq!(law.energy_density(3.0).unwrap(), 9.0);
        assert_eq!(law.energy_density(0.0).unwrap(), 0.0);
        assert!(law.energy_density(-1.0).is_err());
        let with_bump = EnergyLaw::new(1.0, 2.0, Some(bump())).unwrap();
        assert_eq!(with_bump.h(1.1), 1.1 * 1.1 + bump().e(1.1));
    }

    #[test]
    fn pressure_examples() {
        let law = EnergyLaw::gamma_law(1.0, 2.0).unwrap();
        assert_eq!(law.pressure(2.0).unwrap(), 4.0);
        let law = EnergyLaw::gamma_law(1.0, 1.5).unwrap();
        assert!((law.pressure(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(law.pressure(-0.1).is_err());
    }

    #[test]
    fn pressure_matches_finite_difference_with_bump() {
        let law = EnergyLaw::new(1.0, 1.7, Some(bump())).unwrap();
        let delta = 1e-6;
        for rho in [0.9, 1.1, 1.3] {
            let fd = rho * (law.h(rho + delta) - law.h(rho - delta)) / (2.0 * delta) - law.h(rho);
            assert!((fd - law.p(rho)).abs() <= 1e-6 * law.p(rho).abs().max(1.0));
        }
    }

    #[test]
    fn convexity_report_finds_elliptic_region() {
        let law = EnergyLaw::new(1.0, 2.0, Some(BumpSpec::new(-0.2, 0.8, 1.2).unwrap())).unwrap();
        let report = law.convexity(400).unwrap();
        assert!(report.min_d2h < 0.0);
        let (a, b) = report.elliptic_region.unwrap();
        assert!(a < 1.0 && b > 1.0);
        assert!(EnergyLaw::gamma_law(1.0, 2.0).unwrap().convexity(10).is_none());
    }

    #[test]
    fn set2_qhd_passes_with_equality() {
        let law = EnergyLaw::gamma_law(1.0, 2.0).unwrap();
        let v = set2_check(&CapillarityLaw::Qhd, &law, (0.1, 10.0), 200).unwrap();
        assert!(v.passed, "{v:?}");
        assert!(v.hessian_margin.abs() <= 1e-12 * v.hessian_scale);
        assert!((v.derivative_constant - 1.0).abs() < 1e-12);
        assert!(v.growth_constant <= 1.0);
    }

    #[test]
    fn set2_inverse_square_fails() {
        let law = EnergyLaw::gamma_law(1.0, 2.0).unwrap();
        let cap = CapillarityLaw::Power {
            coefficient: 1.0,
            exponent: -2.0,
        };
        let v = set2_check(&cap, &law, (0.1, 10.0), 50).unwrap();
        assert!(!v.passed);
        assert!(matches!(v.failure, Some(Set2Failure::Hessian { .. })));
        // kappa kappa'' - 2 kappa'^2 = 6 rho^-6 - 8 rho^-6, most negative at the first sample
        let expected = -2.0 / 0.1f64.powi(6);
        assert!((v.hessian_margin - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn set2_constant_bounded_vs_unbounded() {
        let law = EnergyLaw::gamma_law(1.0, 1.5).unwrap();
        let cap = CapillarityLaw::Constant(0.5);
        let bounded = set2_check(&cap, &law, (0.5, 2.0), 100).unwrap();
        assert!(bounded.passed);
        assert_eq!(bounded.hessian_margin, 0.0);
        // rho^2 C / (rho^1.5 + rho) is increasing, so the maximum sits at rho = 2
        let expected = 4.0 * 0.5 / (2.0f64.powf(1.5) + 2.0);
        assert!((bounded.growth_constant - expected).abs() < 1e-12);
        let unbounded = set2_check(&cap, &law, (0.0, f64::INFINITY), 200).unwrap();
        assert!(!unbounded.passed);
        assert!(unbounded.unbounded);
    }

    #[test]
    fn set2_nonpositive_kappa_reports_location() {
        let law = EnergyLaw::gamma_law(1.0, 2.0).unwrap();
        let cap = CapillarityLaw::Power {
            coefficient: -1.0,
            exponent: 1.0,
        };
        let v = set2_check(&cap, &law, (1.0, 2.0), 10).unwrap();
        assert!(matches!(v.failure, Some(Set2Failure::NonPositiveKappa { rho, .. }) if rho == 1.0));
    }

    #[test]
    fn fluid_state_rejects_negative_density() {
        let g = TorusGrid::unit(1, 16).unwrap();
        let rho = ScalarField::from_fn(&g, |x| x[0] - 0.5);
        assert!(matches!(FluidState::at_rest(rho), Err(Error::Domain { .. })));
    }

    #[test]
    fn total_energy_trivial_examples() {
        let g = TorusGrid::unit(1, 32).unwrap();
        let mat = Material::new(EnergyLaw::gamma_law(1.0, 2.0).unwrap(), CapillarityLaw::Constant(3.0), 0.7).unwrap();
        let rest = FluidState::at_rest(ScalarField::constant(&g, 1.0)).unwrap();
        assert!((mat.total_energy(&rest).unwrap() - 1.0).abs() < 1e-14);
        let moving = FluidState::new(ScalarField::constant(&g, 1.0), VectorField::from_fn(&g, |_| [1.0, 0.0])).unwrap();
        assert!((mat.total_energy(&moving).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn kinetic_energy_undefined_in_vacuum_with_momentum() {
        let g = TorusGrid::unit(1, 16).unwrap();
        let mut rho = alloc::vec![1.0; 16];
        rho[3] = 0.0;
        let state = FluidState::new(
            ScalarField::new(&g, rho).unwrap(),
            VectorField::from_fn(&g, |_| [0.1, 0.0]),
        )
        .unwrap();
        let mat = Material::new(EnergyLaw::gamma_law(1.0, 2.0).unwrap(), CapillarityLaw::Constant(1.0), 1.0).unwrap();
        assert!(matches!(mat.total_energy(&state), Err(Error::KineticUndefined { node: 3, .. })));
    }

    #[test]
    fn constant_state_stress_is_isotropic_pressure() {
        let g = TorusGrid::unit(2, 16).unwrap();
        let mat = Material::new(EnergyLaw::gamma_law(1.0, 2.0).unwrap(), CapillarityLaw::Qhd, 1.0).unwrap();
        let state = FluidState::new(ScalarField::constant(&g, 2.0), VectorField::from_fn(&g, |_| [0.3, -0.1])).unwrap();
        let s = mat.korteweg_stress(&state).unwrap();
        for v in s.component(0, 0).iter().chain(s.component(1, 1)) {
            assert!((v + 4.0).abs() < 1e-12);
        }
        assert!(s.component(0, 1).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn qhd_requires_positive_density() {
        let g = TorusGrid::unit(1, 16).unwrap();
        let mat = Material::new(EnergyLaw::gamma_law(1.0, 2.0).unwrap(), CapillarityLaw::Qhd, 1.0).unwrap();
        let rho = ScalarField::from_fn(&g, |x| if x[0] < 0.1 { 0.0 } else { 1.0 });
        assert!(matches!(mat.variational_derivative(&rho), Err(Error::Vacuum { .. })));
    }

    #[test]
    fn constant_density_potential() {
        let g = TorusGrid::unit(1, 16).unwrap();
        let law = EnergyLaw::new(1.0, 2.0, Some(bump())).unwrap();
        let mat = Material::new(law, CapillarityLaw::Constant(1.0), 1.0).unwrap();
        let mu = mat.variational_derivative(&ScalarField::constant(&g, 1.1)).unwrap();
        for v in mu.values() {
            assert!((v - law.dh(1.1)).abs() < 1e-12);
        }
    }
}
