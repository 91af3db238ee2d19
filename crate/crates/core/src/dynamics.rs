//! Right-hand sides and time integrators for Euler-Korteweg, compressible
//! Euler, the friction-rescaled Euler-Korteweg system and Cahn-Hilliard.
//!
//! The momentum equation is evaluated with a skew-symmetric convective term
//! and the variational derivative of the discrete energy. Both choices make
//! the semi-discrete total energy an exact invariant, so the only energy drift
//! left is the time-stepping error.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::constitutive::{check_vacuum, CapillarityLaw, EnergyLaw, FluidState, Material, DEFAULT_VACUUM_FLOOR};
use crate::error::{Error, Result};
use crate::grid::{div_grad_symbol, ScalarField, TensorField, TorusGrid, VectorField};

/// Time derivative of a fluid state. Unlike [`FluidState`] the density part
/// may take either sign.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRate {
    pub rho: ScalarField,
    pub m: VectorField,
}

impl StateRate {
    pub fn max_abs(&self) -> f64 {
        self.rho.max_abs().max(self.m.max_abs())
    }
}

/// Skew-symmetric form of `-div(m (x) u)`:
/// `-(1/2) [div(m (x) u)_i + (m . grad) u_i + u_i div m]`.
fn skew_convection(m: &VectorField, u: &VectorField) -> Result<VectorField> {
    let flux = TensorField::outer(u, m).divergence()?;
    let jac = u.jacobian()?;
    let div_m = m.divergence()?;
    let dim = m.dim();
    let len = m.grid().len();
    let comps = (0..dim)
        .map(|i| {
            (0..len)
                .map(|n| {
                    let advect: f64 = (0..dim).map(|j| m.component(j)[n] * jac.component(i, j)[n]).sum();
                    -0.5 * (flux.component(i)[n] + advect + u.component(i)[n] * div_m.values()[n])
                })
                .collect()
        })
        .collect();
    VectorField::new(m.grid(), comps)
}

fn check_state(state: &FluidState, floor: f64) -> Result<VectorField> {
    check_vacuum(&state.rho, floor, f64::NAN)?;
    state.velocity(floor)
}

/// Euler-Korteweg right-hand side
/// `(rho_t, m_t) = (-div m, -div(m (x) m / rho) - rho grad mu)`.
///
/// With `eps = 0` (or zero capillarity) this is exactly [`euler_rhs`].
pub fn ek_rhs(state: &FluidState, material: &Material) -> Result<StateRate> {
    let u = check_state(state, material.vacuum_floor)?;
    let mu = material.variational_derivative(&state.rho)?;
    let grad_mu = mu.gradient()?;
    let conv = skew_convection(&state.m, &u)?;
    let rho = &state.rho;
    let m_t = conv.zip_map(&grad_mu.zip_scalar(rho, |g, r| r * g), |c, f| c - f);
    Ok(StateRate {
        rho: -&state.m.divergence()?,
        m: m_t,
    })
}

/// Conservative form `m_t = -div(m (x) m / rho) + div S`, used to cross-check
/// [`ek_rhs`].
pub fn ek_rhs_conservative(state: &FluidState, material: &Material) -> Result<StateRate> {
    let u = check_state(state, material.vacuum_floor)?;
    let stress = material.korteweg_stress(state)?;
    let flux = TensorField::outer(&state.m, &u);
    let m_t = &stress.divergence()? - &flux.divergence()?;
    Ok(StateRate {
        rho: -&state.m.divergence()?,
        m: m_t,
    })
}

/// Compressible Euler right-hand side, `mu = h'(rho)`.
pub fn euler_rhs(state: &FluidState, energy: &EnergyLaw) -> Result<StateRate> {
    ek_rhs(state, &Material::euler(*energy))
}

fn friction_material(energy: &EnergyLaw, c_kappa: f64) -> Result<Material> {
    Material::new(*energy, CapillarityLaw::Constant(c_kappa), 1.0)
}

/// Friction-rescaled right-hand side
/// `rho_t = -div m / eps`,
/// `m_t = -div(m (x) m / rho)/eps - m/eps^2 - rho grad(h' - C_kappa lap rho)/eps`.
pub fn ekf_rhs(state: &FluidState, energy: &EnergyLaw, c_kappa: f64, eps: f64) -> Result<StateRate> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("friction scale eps = {eps} must be positive")));
    }
    let rate = ek_rhs(state, &friction_material(energy, c_kappa)?)?;
    let inv = 1.0 / eps;
    let m = rate.m.zip_map(&state.m, |r, m| inv * r - inv * inv * m);
    Ok(StateRate {
        rho: &rate.rho * inv,
        m,
    })
}

/// Cahn-Hilliard chemical potential `h'(rho) - C_kappa div grad rho`.
pub fn ch_chemical_potential(rho: &ScalarField, energy: &EnergyLaw, c_kappa: f64) -> Result<ScalarField> {
    let lap = rho.div_grad()?;
    Ok(rho.zip_map(&lap, |r, l| energy.dh(r) - c_kappa * l))
}

/// Cahn-Hilliard right-hand side `div(rho grad(h'(rho) - C_kappa lap rho))`.
pub fn ch_rhs(rho: &ScalarField, energy: &EnergyLaw, c_kappa: f64) -> Result<ScalarField> {
    let mu = ch_chemical_potential(rho, energy, c_kappa)?;
    mu.gradient()?.zip_scalar(rho, |g, r| r * g).divergence()
}

/// Lyapunov functional `int h(rho) + C_kappa |grad rho|^2 / 2`.
pub fn ch_free_energy(rho: &ScalarField, energy: &EnergyLaw, c_kappa: f64) -> Result<f64> {
    let g2 = rho.gradient()?.norm_sq();
    rho.zip_map(&g2, |r, g| energy.h(r) + 0.5 * c_kappa * g).integrate()
}

/// The fluid system an integration evolves.
#[derive(Debug, Clone, Copy)]
pub enum System {
    EulerKorteweg(Material),
    Euler(EnergyLaw),
    /// Friction-rescaled EK with constant capillarity; `eps` is the friction scale.
    Friction { energy: EnergyLaw, c_kappa: f64, eps: f64 },
}

impl System {
    /// Material whose total energy is the system's conserved (or dissipated) energy.
    pub fn material(&self) -> Result<Material> {
        match *self {
            Self::EulerKorteweg(m) => Ok(m),
            Self::Euler(e) => Ok(Material::euler(e)),
            Self::Friction { energy, c_kappa, .. } => friction_material(&energy, c_kappa),
        }
    }

    fn friction_rate(&self) -> Option<f64> {
        match *self {
            Self::Friction { eps, .. } => Some(1.0 / (eps * eps)),
            _ => None,
        }
    }

    fn time_scale(&self) -> f64 {
        match *self {
            Self::Friction { eps, .. } => eps,
            _ => 1.0,
        }
    }
}

/// Time step selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStep {
    /// CFL-limited step chosen from the initial state.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Rk4,
    /// First-order IMEX for Cahn-Hilliard with an implicit stabilized bilaplacian.
    ImexCh,
}

/// Treatment of the stiff friction term `-m/eps^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrictionScheme {
    /// Integrating-factor (Lawson) RK4: friction solved exactly inside every stage.
    IntegratingFactor,
    /// Half exact friction, full RK4 of the rest, half exact friction.
    Strang,
    /// Plain RK4 on the full right-hand side; requires `dt <= eps^2/2`.
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: TimeStep,
    pub t_end: f64,
    pub cfl_advective: f64,
    pub cfl_dispersive: f64,
    pub vacuum_floor: f64,
    pub scheme: Scheme,
    /// Store a snapshot every this many steps (the final time is always stored).
    pub snapshot_every: usize,
    pub friction: FrictionScheme,
    /// Evaluate the momentum equation through the Korteweg stress.
    pub conservative_form: bool,
    /// Apply the two-thirds filter to every stage's rate.
    pub dealias: bool,
    /// Abort when the upper third of the density spectrum exceeds this
    /// fraction of the mean density.
    pub resolution_tolerance: Option<f64>,
    /// Abort when `max |grad u|` exceeds this multiple of its initial value.
    pub max_gradient_growth: Option<f64>,
}

impl SolverConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            dt: TimeStep::Auto,
            t_end,
            cfl_advective: 0.4,
            cfl_dispersive: 0.2,
            vacuum_floor: DEFAULT_VACUUM_FLOOR,
            scheme: Scheme::Rk4,
            snapshot_every: 10,
            friction: FrictionScheme::IntegratingFactor,
            conservative_form: false,
            dealias: false,
            resolution_tolerance: Some(1e-4),
            max_gradient_growth: None,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = TimeStep::Fixed(dt);
        self
    }

    pub fn with_snapshot_every(mut self, every: usize) -> Self {
        self.snapshot_every = every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end = {} must be positive", self.t_end));
        }
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dt = {dt} must be positive"));
            }
        }
        if !(self.cfl_advective > 0.0 && self.cfl_dispersive > 0.0) {
            return bad(String::from("CFL constants must be positive"));
        }
        if !(self.vacuum_floor >= 0.0) {
            return bad(format!("vacuum floor {} must be >= 0", self.vacuum_floor));
        }
        if self.snapshot_every == 0 {
            return bad(String::from("snapshot_every must be at least 1"));
        }
        Ok(())
    }
}

/// Per-snapshot diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    pub mass: f64,
    /// Total energy of the system (the free energy for Cahn-Hilliard).
    pub energy: f64,
    pub min_rho: f64,
    pub momentum: [f64; 2],
    /// Cumulative friction dissipation `int_0^t eps^-2 int |m|^2/rho`, trapezoid per step.
    pub dissipation: f64,
}

/// Snapshots of an integration on a uniform step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub diagnostics: Vec<Diagnostics>,
    /// Solver step used.
    pub dt: f64,
}

impl<S> Trajectory<S> {
    pub fn new(dt: f64) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            diagnostics: Vec::new(),
            dt,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, state: S, diag: Diagnostics) {
        debug_assert!(self.times.last().map_or(true, |&last| t > last));
        self.times.push(t);
        self.states.push(state);
        self.diagnostics.push(diag);
    }

    pub fn last(&self) -> Option<&S> {
        self.states.last()
    }

    /// Index of the snapshot at time `t` (within `1e-9` relative).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }

    /// Largest relative deviation of a diagnostic from its initial value,
    /// measured against `scale` (or the initial magnitude when larger).
    pub fn max_drift(&self, f: impl Fn(&Diagnostics) -> f64, scale: f64) -> f64 {
        let Some(first) = self.diagnostics.first() else {
            return 0.0;
        };
        let v0 = f(first);
        let denom = v0.abs().max(scale);
        self.diagnostics
            .iter()
            .map(|d| (f(d) - v0).abs() / denom)
            .fold(0.0, f64::max)
    }
}

/// An aborted integration together with everything computed before the abort.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationFailure<S> {
    pub error: Error,
    pub partial: Trajectory<S>,
}

impl<S> fmt::Display for IntegrationFailure<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} snapshots)", self.error, self.partial.len())
    }
}

impl<S: fmt::Debug> core::error::Error for IntegrationFailure<S> {}

impl<S> From<IntegrationFailure<S>> for Error {
    fn from(f: IntegrationFailure<S>) -> Error {
        f.error
    }
}

pub type IntegrationResult<S> = core::result::Result<Trajectory<S>, IntegrationFailure<S>>;

type Flat = Vec<Vec<f64>>;

fn flatten(state: &FluidState) -> Flat {
    let mut out = Vec::with_capacity(1 + state.m.dim());
    out.push(state.rho.values().to_vec());
    out.extend(state.m.components().iter().cloned());
    out
}

fn unflatten(grid: &TorusGrid, y: &Flat) -> Result<FluidState> {
    let rho = ScalarField::new(grid, y[0].clone())?;
    let m = VectorField::new(grid, y[1..].to_vec())?;
    Ok(FluidState { rho, m })
}

fn flatten_rate(rate: StateRate) -> Flat {
    let mut out = Vec::with_capacity(1 + rate.m.dim());
    out.push(rate.rho.into_values());
    out.extend(rate.m.components().iter().cloned());
    out
}

/// `sum_k c_k x_k` over flat states.
fn combine(terms: &[(f64, &Flat)]) -> Flat {
    let (c0, x0) = terms[0];
    let mut out: Flat = x0.iter().map(|c| c.iter().map(|v| c0 * v).collect()).collect();
    for &(c, x) in &terms[1..] {
        for (o, xc) in out.iter_mut().zip(x.iter()) {
            for (a, b) in o.iter_mut().zip(xc) {
                *a += c * b;
            }
        }
    }
    out
}

/// Multiplies the momentum components by `factor`.
fn damp(y: &Flat, factor: f64) -> Flat {
    let mut out = y.clone();
    for c in out.iter_mut().skip(1) {
        for v in c.iter_mut() {
            *v *= factor;
        }
    }
    out
}

struct FluidStepper<'a> {
    system: System,
    material: Material,
    grid: &'a TorusGrid,
    cfg: &'a SolverConfig,
}

impl FluidStepper<'_> {
    /// Non-stiff part of the rate (everything except friction).
    fn rate(&self, y: &Flat) -> Result<Flat> {
        let state = unflatten(self.grid, y)?;
        let mut rate = if self.cfg.conservative_form {
            ek_rhs_conservative(&state, &self.material)?
        } else {
            ek_rhs(&state, &self.material)?
        };
        let scale = 1.0 / self.system.time_scale();
        if scale != 1.0 {
            rate.rho = &rate.rho * scale;
            rate.m = rate.m.scale(scale);
        }
        if self.cfg.dealias {
            rate.rho = rate.rho.dealiased()?;
            rate.m = VectorField::from_scalars(
                (0..rate.m.dim())
                    .map(|a| rate.m.component_field(a).dealiased())
                    .collect::<Result<Vec<_>>>()?,
            )?;
        }
        Ok(flatten_rate(rate))
    }

    fn rk4(&self, y: &Flat, dt: f64, lambda: f64) -> Result<Flat> {
        let f = |y: &Flat| -> Result<Flat> {
            let mut r = self.rate(y)?;
            if lambda != 0.0 {
                for (rc, yc) in r.iter_mut().zip(y.iter()).skip(1) {
                    for (a, b) in rc.iter_mut().zip(yc) {
                        *a -= lambda * b;
                    }
                }
            }
            Ok(r)
        };
        let k1 = f(y)?;
        let k2 = f(&combine(&[(1.0, y), (0.5 * dt, &k1)]))?;
        let k3 = f(&combine(&[(1.0, y), (0.5 * dt, &k2)]))?;
        let k4 = f(&combine(&[(1.0, y), (dt, &k3)]))?;
        Ok(combine(&[
            (1.0, y),
            (dt / 6.0, &k1),
            (dt / 3.0, &k2),
            (dt / 3.0, &k3),
            (dt / 6.0, &k4),
        ]))
    }

    /// Lawson RK4 with `E_tau = exp(-lambda tau)` applied to the momentum.
    fn lawson(&self, y: &Flat, dt: f64, lambda: f64) -> Result<Flat> {
        let half = (-0.5 * lambda * dt).exp();
        let full = half * half;
        let k1 = self.rate(y)?;
        let k2 = self.rate(&damp(&combine(&[(1.0, y), (0.5 * dt, &k1)]), half))?;
        let y_half = damp(y, half);
        let k3 = self.rate(&combine(&[(1.0, &y_half), (0.5 * dt, &k2)]))?;
        let k4 = self.rate(&combine(&[(1.0, &damp(y, full)), (dt, &damp(&k3, half))]))?;
        let k23 = combine(&[(1.0, &k2), (1.0, &k3)]);
        Ok(combine(&[
            (1.0, &damp(y, full)),
            (dt / 6.0, &damp(&k1, full)),
            (dt / 3.0, &damp(&k23, half)),
            (dt / 6.0, &k4),
        ]))
    }

    fn step(&self, y: &Flat, dt: f64) -> Result<Flat> {
        match self.system.friction_rate() {
            None => self.rk4(y, dt, 0.0),
            Some(lambda) => match self.cfg.friction {
                FrictionScheme::IntegratingFactor => self.lawson(y, dt, lambda),
                FrictionScheme::Strang => {
                    let half = (-0.5 * lambda * dt).exp();
                    Ok(damp(&self.rk4(&damp(y, half), dt, 0.0)?, half))
                }
                FrictionScheme::Explicit => self.rk4(y, dt, lambda),
            },
        }
    }

    /// `eps^-2 int |m|^2 / rho`, the friction dissipation rate.
    fn dissipation_rate(&self, y: &Flat) -> f64 {
        let Some(lambda) = self.system.friction_rate() else {
            return 0.0;
        };
        let floor = self.material.vacuum_floor;
        let sum: f64 = (0..y[0].len())
            .map(|n| {
                let r = y[0][n];
                if r < floor {
                    0.0
                } else {
                    y[1..].iter().map(|c| c[n] * c[n]).sum::<f64>() / r
                }
            })
            .sum();
        lambda * sum * self.grid.cell_volume()
    }
}

fn fluid_diagnostics(state: &FluidState, material: &Material, dissipation: f64) -> Result<Diagnostics> {
    Ok(Diagnostics {
        mass: state.mass()?,
        energy: material.total_energy(state)?,
        min_rho: state.rho.min(),
        momentum: state.momentum()?,
        dissipation,
    })
}

/// Largest spectral amplitude in the upper third of the band relative to the mean.
pub fn spectral_tail(rho: &ScalarField) -> f64 {
    let grid = rho.grid();
    let spec = rho.spectrum();
    let cutoff = (grid.points_per_axis() / 3) as i64;
    let mean = spec[0].norm().max(f64::MIN_POSITIVE);
    grid.modes()
        .zip(&spec)
        .filter(|(m, _)| m.index.iter().any(|j| j.abs() > cutoff))
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max)
        / mean
}

fn max_velocity_gradient(state: &FluidState, floor: f64) -> Result<f64> {
    Ok(state.velocity(floor)?.jacobian()?.max_abs())
}

/// Steps and step size covering `[0, t_end]` exactly.
pub fn step_count(dt: f64, t_end: f64) -> (usize, f64) {
    let steps = ((t_end / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (steps, t_end / steps as f64)
}

/// CFL time step for a fluid system at `state`:
/// `min(cfl_adv dx / max(|u| + sqrt(p')), cfl_disp dx^2 / sqrt(eps kappa rho)_max)`,
/// both scaled by the friction time scale when present.
pub fn auto_dt(system: &System, state: &FluidState, cfg: &SolverConfig) -> Result<f64> {
    let material = system.material()?;
    let u = state.velocity(cfg.vacuum_floor)?;
    let dx = state.grid().min_spacing();
    let mut speed: f64 = 0.0;
    let mut disp: f64 = 0.0;
    for (n, &r) in state.rho.values().iter().enumerate() {
        let c = material.energy.dp(r).max(0.0).sqrt();
        let umax = u.components().iter().map(|comp| comp[n].abs()).fold(0.0, f64::max);
        speed = speed.max(umax + c);
        if material.has_capillarity() {
            let k = material.eps * material.capillarity.kappa(r);
            disp = disp.max((k * r).max(0.0).sqrt());
        }
    }
    let scale = system.time_scale();
    let mut dt = f64::INFINITY;
    if speed > 0.0 {
        dt = dt.min(cfg.cfl_advective * dx / speed);
    }
    if disp > 0.0 {
        dt = dt.min(cfg.cfl_dispersive * dx * dx / disp);
    }
    dt *= scale;
    if let (Some(lambda), FrictionScheme::Explicit) = (system.friction_rate(), cfg.friction) {
        dt = dt.min(0.5 / lambda);
    }
    if !dt.is_finite() {
        dt = cfg.t_end;
    }
    Ok(dt)
}

fn with_time(err: Error, t: f64) -> Error {
    match err {
        Error::Vacuum {
            min_rho, node, floor, ..
        } => Error::Vacuum {
            min_rho,
            node,
            floor,
            time: t,
        },
        Error::NonFinite { node, value } => Error::Instability {
            time: t,
            reason: format!("non-finite value {value} at node {node}"),
        },
        other => other,
    }
}

/// Integrates a fluid system with RK4 (plus the chosen friction treatment).
///
/// On failure the snapshots stored so far are returned with the error.
pub fn integrate(system: &System, initial: &FluidState, cfg: &SolverConfig) -> IntegrationResult<FluidState> {
    let fail = |error: Error, partial: Trajectory<FluidState>| Err(IntegrationFailure { error, partial });
    if let Err(e) = cfg.validate() {
        return fail(e, Trajectory::new(0.0));
    }
    if cfg.scheme != Scheme::Rk4 {
        return fail(
            Error::Unsupported(String::from("fluid systems are integrated with RK4 only")),
            Trajectory::new(0.0),
        );
    }
    let setup = (|| -> Result<(Material, f64, usize)> {
        let mut material = system.material()?;
        material.vacuum_floor = cfg.vacuum_floor;
        initial.check_vacuum(cfg.vacuum_floor, 0.0)?;
        let dt = match cfg.dt {
            TimeStep::Fixed(dt) => dt,
            TimeStep::Auto => auto_dt(system, initial, cfg)?,
        };
        if let (Some(lambda), FrictionScheme::Explicit) = (system.friction_rate(), cfg.friction) {
            if dt > 0.5 / lambda * (1.0 + 1e-12) {
                return Err(Error::Stiffness { dt, limit: 0.5 / lambda });
            }
        }
        let (steps, dt) = step_count(dt, cfg.t_end);
        Ok((material, dt, steps))
    })();
    let (material, dt, steps) = match setup {
        Ok(v) => v,
        Err(e) => return fail(e, Trajectory::new(0.0)),
    };
    let system = match *system {
        System::EulerKorteweg(_) => System::EulerKorteweg(material),
        other => other,
    };
    let grid = initial.grid();
    let stepper = FluidStepper {
        system,
        material,
        grid,
        cfg,
    };

    let mut traj = Trajectory::new(dt);
    let diag0 = match fluid_diagnostics(initial, &material, 0.0) {
        Ok(d) => d,
        Err(e) => return fail(e, traj),
    };
    let grad0 = match cfg.max_gradient_growth {
        Some(_) => match max_velocity_gradient(initial, cfg.vacuum_floor) {
            Ok(g) => g,
            Err(e) => return fail(e, traj),
        },
        None => 0.0,
    };
    traj.push(0.0, initial.clone(), diag0);

    let mut y = flatten(initial);
    let mut dissipation = 0.0;
    let mut d_prev = stepper.dissipation_rate(&y);
    for step in 1..=steps {
        let t0 = (step - 1) as f64 * dt;
        let t = if step == steps { cfg.t_end } else { step as f64 * dt };
        y = match stepper.step(&y, dt) {
            Ok(next) => next,
            Err(e) => return fail(with_time(e, t0), traj),
        };
        if let Some((node, &value)) = y.iter().flatten().enumerate().find(|(_, v)| !v.is_finite()) {
            return fail(
                Error::Instability {
                    time: t,
                    reason: format!("non-finite value {value} at flat index {node}"),
                },
                traj,
            );
        }
        let d_next = stepper.dissipation_rate(&y);
        dissipation += 0.5 * dt * (d_prev + d_next);
        d_prev = d_next;
        if step % cfg.snapshot_every != 0 && step != steps {
            continue;
        }
        let snapshot = (|| -> Result<(FluidState, Diagnostics)> {
            let state = unflatten(grid, &y)?;
            state.check_vacuum(cfg.vacuum_floor, t)?;
            if let Some(tol) = cfg.resolution_tolerance {
                let tail = spectral_tail(&state.rho);
                if tail > tol {
                    return Err(Error::Instability {
                        time: t,
                        reason: format!("resolution lost: spectral tail {tail:e} exceeds {tol:e}"),
                    });
                }
            }
            if let Some(limit) = cfg.max_gradient_growth {
                let g = max_velocity_gradient(&state, cfg.vacuum_floor)?;
                if grad0 > 0.0 && g > limit * grad0 {
                    return Err(Error::Instability {
                        time: t,
                        reason: format!("max |grad u| grew from {grad0:e} to {g:e}"),
                    });
                }
            }
            let diag = fluid_diagnostics(&state, &material, dissipation)?;
            Ok((state, diag))
        })();
        match snapshot {
            Ok((state, diag)) => traj.push(t, state, diag),
            Err(e) => return fail(with_time(e, t), traj),
        }
    }
    Ok(traj)
}

fn ch_diagnostics(rho: &ScalarField, energy: &EnergyLaw, c_kappa: f64) -> Result<Diagnostics> {
    Ok(Diagnostics {
        mass: rho.integrate()?,
        energy: ch_free_energy(rho, energy, c_kappa)?,
        min_rho: rho.min(),
        momentum: [0.0; 2],
        dissipation: 0.0,
    })
}

/// Stable step for Cahn-Hilliard: `cfl_dispersive dx^2 / max|rho h''|` for the
/// explicit part of the splitting; with RK4 additionally `2.5 / lambda` for the
/// spectral radius `lambda = C_kappa max(rho) k^4 + max|rho h''| k^2` at `k = pi/dx`.
pub fn auto_dt_ch(rho: &ScalarField, energy: &EnergyLaw, c_kappa: f64, cfg: &SolverConfig) -> f64 {
    let dx = rho.grid().min_spacing();
    let diff = rho
        .values()
        .iter()
        .map(|&r| (r * energy.d2h(r)).abs())
        .fold(0.0, f64::max);
    let mut dt = if diff > 0.0 {
        cfg.cfl_dispersive * dx * dx / diff
    } else {
        cfg.t_end
    };
    if cfg.scheme == Scheme::Rk4 {
        let k2 = (core::f64::consts::PI / dx).powi(2);
        let lambda = c_kappa * rho.max() * k2 * k2 + diff * k2;
        if lambda > 0.0 {
            dt = dt.min(2.5 / lambda);
        }
    }
    dt
}

/// One first-order IMEX step
/// `rho^{n+1} = F^{-1}[(rho^n + dt N)^ / (1 + dt C_kappa M |k|^4)]`,
/// `N = ch_rhs(rho^n) + C_kappa M lap^2 rho^n`, `M = max rho^n`.
pub fn ch_imex_step(rho: &ScalarField, energy: &EnergyLaw, c_kappa: f64, dt: f64) -> Result<ScalarField> {
    let grid = rho.grid();
    let dim = grid.dim();
    let mobility = rho.max();
    let rate = ch_rhs(rho, energy, c_kappa)?.spectrum();
    let spec = rho.spectrum();
    let out: Vec<Complex64> = grid
        .modes()
        .zip(spec.iter().zip(&rate))
        .map(|(m, (&r, &n))| {
            let s = div_grad_symbol(&m, dim);
            let stiff = dt * c_kappa * mobility * s * s;
            (r + n * dt + r * stiff) / (1.0 + stiff)
        })
        .collect();
    ScalarField::new(grid, grid.inverse_real(out))
}

/// Integrates Cahn-Hilliard with the IMEX splitting (or plain RK4 if requested).
pub fn integrate_ch(rho0: &ScalarField, energy: &EnergyLaw, c_kappa: f64, cfg: &SolverConfig) -> IntegrationResult<ScalarField> {
    let fail = |error: Error, partial: Trajectory<ScalarField>| Err(IntegrationFailure { error, partial });
    if let Err(e) = cfg.validate() {
        return fail(e, Trajectory::new(0.0));
    }
    if let Err(e) = check_vacuum(rho0, cfg.vacuum_floor, 0.0) {
        return fail(e, Trajectory::new(0.0));
    }
    let dt = match cfg.dt {
        TimeStep::Fixed(dt) => dt,
        TimeStep::Auto => auto_dt_ch(rho0, energy, c_kappa, cfg),
    };
    let (steps, dt) = step_count(dt, cfg.t_end);
    let mut traj = Trajectory::new(dt);
    match ch_diagnostics(rho0, energy, c_kappa) {
        Ok(d) => traj.push(0.0, rho0.clone(), d),
        Err(e) => return fail(e, traj),
    }
    let rk4 = |rho: &ScalarField| -> Result<ScalarField> {
        let f = |r: &ScalarField| ch_rhs(r, energy, c_kappa);
        let k1 = f(rho)?;
        let k2 = f(&rho.zip_map(&k1, |a, b| a + 0.5 * dt * b))?;
        let k3 = f(&rho.zip_map(&k2, |a, b| a + 0.5 * dt * b))?;
        let k4 = f(&rho.zip_map(&k3, |a, b| a + dt * b))?;
        let mut out = rho.clone();
        for (i, o) in out.values_mut().iter_mut().enumerate() {
            *o += dt / 6.0 * (k1.values()[i] + 2.0 * k2.values()[i] + 2.0 * k3.values()[i] + k4.values()[i]);
        }
        Ok(out)
    };
    let mut rho = rho0.clone();
    for step in 1..=steps {
        let t0 = (step - 1) as f64 * dt;
        let t = if step == steps { cfg.t_end } else { step as f64 * dt };
        let next = match cfg.scheme {
            Scheme::ImexCh => ch_imex_step(&rho, energy, c_kappa, dt),
            Scheme::Rk4 => rk4(&rho),
        };
        rho = match next.and_then(|r| check_vacuum(&r, cfg.vacuum_floor, t).map(|_| r)) {
            Ok(r) => r,
            Err(e) => return fail(with_time(e, t0), traj),
        };
        if step % cfg.snapshot_every != 0 && step != steps {
            continue;
        }
        match ch_diagnostics(&rho, energy, c_kappa) {
            Ok(d) => traj.push(t, rho.clone(), d),
            Err(e) => return fail(with_time(e, t), traj),
        }
    }
    Ok(traj)
}

/// Linearized Cahn-Hilliard growth rate `-rho0 |k|^2 (h''(rho0) + C_kappa |k|^2)`.
pub fn ch_growth_rate(rho0: f64, k: f64, energy: &EnergyLaw, c_kappa: f64) -> f64 {
    -rho0 * k * k * (energy.d2h(rho0) + c_kappa * k * k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::BumpSpec;
    use core::f64::consts::TAU;

    fn grid(n: usize) -> TorusGrid {
        TorusGrid::unit(1, n).unwrap()
    }

    fn smooth_state(g: &TorusGrid) -> FluidState {
        let rho = ScalarField::from_fn(g, |x| 1.0 + 0.1 * (TAU * x[0]).sin());
        let u = VectorField::from_fn(g, |x| [0.1 * (TAU * x[0]).cos(), 0.0]);
        FluidState::from_velocity(rho, &u).unwrap()
    }

    fn ek_material(c_kappa: f64) -> Material {
        Material::new(EnergyLaw::gamma_law(1.0, 2.0).unwrap(), CapillarityLaw::Constant(c_kappa), 1.0).unwrap()
    }

    #[test]
    fn constant_state_has_zero_rate() {
        let g = grid(32);
        let state = FluidState::new(ScalarField::constant(&g, 1.3), VectorField::from_fn(&g, |_| [0.4, 0.0])).unwrap();
        let rate = ek_rhs(&state, &ek_material(0.5)).unwrap();
        assert!(rate.max_abs() < 1e-13);
        let rate = ekf_rhs(&FluidState::at_rest(ScalarField::constant(&g, 1.3)).unwrap(), &ek_material(0.5).energy, 0.5, 0.1).unwrap();
        assert!(rate.max_abs() < 1e-12);
    }

    #[test]
    fn eps_zero_matches_euler_bitwise() {
        let g = grid(64);
        let state = smooth_state(&g);
        let law = EnergyLaw::gamma_law(1.0, 2.0).unwrap();
        let a = ek_rhs(&state, &ek_material(0.3).with_eps(0.0)).unwrap();
        let b = euler_rhs(&state, &law).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn primitive_and_conservative_forms_agree() {
        let g = grid(128);
        let state = smooth_state(&g);
        let mat = Material::new(
            EnergyLaw::new(1.0, 2.0, Some(BumpSpec::new(-0.05, 0.7, 1.4).unwrap())).unwrap(),
            CapillarityLaw::Qhd,
            0.5,
        )
        .unwrap();
        let a = ek_rhs(&state, &mat).unwrap();
        let b = ek_rhs_conservative(&state, &mat).unwrap();
        assert!((&a.m - &b.m).max_abs() < 1e-8, "{}", (&a.m - &b.m).max_abs());
    }

    #[test]
    fn zero_rate_system_stays_constant() {
        let g = grid(16);
        let state = FluidState::at_rest(ScalarField::constant(&g, 2.0)).unwrap();
        let traj = integrate(&System::EulerKorteweg(ek_material(1.0)), &state, &SolverConfig::new(0.1).with_dt(0.01)).unwrap();
        for s in &traj.states {
            assert!((&s.rho - &state.rho).max_abs() < 1e-14);
        }
        assert_eq!(traj.times.len(), 2);
        assert_eq!(*traj.times.last().unwrap(), 0.1);
    }

    #[test]
    fn frozen_friction_decays_exactly() {
        let g = grid(16);
        let state = FluidState::new(ScalarField::constant(&g, 1.0), VectorField::from_fn(&g, |_| [1.0, 0.0])).unwrap();
        let eps = 0.1;
        let system = System::Friction {
            energy: EnergyLaw::gamma_law(1.0, 2.0).unwrap(),
            c_kappa: 0.1,
            eps,
        };
        let cfg = SolverConfig::new(0.05).with_dt(0.01).with_snapshot_every(1);
        let traj = integrate(&system, &state, &cfg).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let expect = (-t / (eps * eps)).exp();
            assert!((s.m.component(0)[3] - expect).abs() < 1e-14 * expect.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn explicit_friction_rejects_stiff_step() {
        let g = grid(16);
        let state = smooth_state(&g);
        let system = System::Friction {
            energy: EnergyLaw::gamma_law(1.0, 2.0).unwrap(),
            c_kappa: 0.1,
            eps: 0.1,
        };
        let mut cfg = SolverConfig::new(0.1).with_dt(0.01);
        cfg.friction = FrictionScheme::Explicit;
        let err = integrate(&system, &state, &cfg).unwrap_err();
        assert!(matches!(err.error, Error::Stiffness { .. }));
    }

    #[test]
    fn vacuum_abort_returns_partial_trajectory() {
        let g = grid(32);
        let rho = ScalarField::from_fn(&g, |x| 1.0 + 0.5 * (TAU * x[0]).sin());
        let u = VectorField::from_fn(&g, |x| [-3.0 * (TAU * x[0]).cos(), 0.0]);
        let state = FluidState::from_velocity(rho, &u).unwrap();
        let mut cfg = SolverConfig::new(2.0).with_snapshot_every(1);
        cfg.vacuum_floor = 0.3;
        cfg.resolution_tolerance = None;
        let err = integrate(&System::Euler(EnergyLaw::gamma_law(1.0, 2.0).unwrap()), &state, &cfg).unwrap_err();
        assert!(matches!(err.error, Error::Vacuum { .. } | Error::Instability { .. }), "{:?}", err.error);
        assert!(!err.partial.is_empty());
    }

    #[test]
    fn ch_constant_is_stationary_and_mass_exact() {
        let g = grid(32);
        let law = EnergyLaw::gamma_law(1.0, 2.0).unwrap();
        assert!(ch_rhs(&ScalarField::constant(&g, 1.2), &law, 0.1).unwrap().max_abs() < 1e-13);
        let rho0 = ScalarField::from_fn(&g, |x| 1.0 + 0.2 * (TAU * x[0]).cos());
        let mut cfg = SolverConfig::new(0.01).with_dt(1e-4);
        cfg.scheme = Scheme::ImexCh;
        let traj = integrate_ch(&rho0, &law, 0.01, &cfg).unwrap();
        let m0 = traj.diagnostics[0].mass;
        for d in &traj.diagnostics {
            assert!((d.mass - m0).abs() <= 1e-14 * m0);
        }
        for w in traj.diagnostics.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-12);
        }
    }

    #[test]
    fn step_count_divides_interval() {
        let (n, dt) = step_count(0.03, 0.1);
        assert_eq!(n, 4);
        assert!((dt * n as f64 - 0.1).abs() < 1e-16);
        assert_eq!(step_count(0.025, 0.1).0, 4);
    }
}
