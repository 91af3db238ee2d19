//! One driver per study. Each returns a typed report whose `checks` decide
//! the exit status.

use korteweg_core::dynamics::{
    auto_dt, integrate, step_count, Diagnostics, IntegrationFailure, SolverConfig, System, TimeStep, Trajectory,
};
use korteweg_core::rate::{fit_loglog, fit_rate};
use korteweg_core::{FluidState, RateFit, ScalarField, TorusGrid};
use serde::Serialize;

use crate::config::{ExperimentConfig, Study, SystemKind};
use crate::output::OutputDir;
use crate::LabError;

pub mod capillarity;
pub mod energy_balance;
pub mod friction;
pub mod mollify_check;
pub mod simulate;
pub mod spinodal;
pub mod weak_strong;

/// One pass/fail verdict with the measured value behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum StudyReport {
    Simulate(simulate::SimulateReport),
    EnergyBalance(energy_balance::EnergyBalanceReport),
    WeakStrong(weak_strong::WeakStrongReport),
    Capillarity(capillarity::CapillarityReport),
    Friction(friction::FrictionReport),
    Spinodal(spinodal::SpinodalReport),
    MollifyCheck(mollify_check::MollifyReport),
}

impl StudyReport {
    pub fn checks(&self) -> Vec<Check> {
        match self {
            StudyReport::Simulate(r) => r.checks(),
            StudyReport::EnergyBalance(r) => r.checks(),
            StudyReport::WeakStrong(r) => r.checks(),
            StudyReport::Capillarity(r) => r.checks(),
            StudyReport::Friction(r) => r.checks(),
            StudyReport::Spinodal(r) => r.checks(),
            StudyReport::MollifyCheck(r) => r.checks(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }
}

/// Validates `cfg` for `study`, runs it and writes `checks.csv`.
pub fn run_study(study: Study, cfg: &ExperimentConfig, out: &OutputDir, jobs: usize) -> Result<StudyReport, LabError> {
    cfg.validate(study)?;
    let report = match study {
        Study::Simulate => StudyReport::Simulate(simulate::run(cfg, out)?),
        Study::EnergyBalance => StudyReport::EnergyBalance(energy_balance::run(cfg, out, jobs)?),
        Study::WeakStrong => StudyReport::WeakStrong(weak_strong::run(cfg, out, jobs)?),
        Study::Capillarity => StudyReport::Capillarity(capillarity::run(cfg, out, jobs)?),
        Study::Friction => StudyReport::Friction(friction::run(cfg, out, jobs)?),
        Study::Spinodal => StudyReport::Spinodal(spinodal::run(cfg, out)?),
        Study::MollifyCheck => StudyReport::MollifyCheck(mollify_check::run(cfg, out, jobs)?),
    };
    out.write_csv("checks.csv", &report.checks())?;
    Ok(report)
}

/// Fluid system selected by `experiment.system`; Cahn-Hilliard is not a fluid
/// system and is rejected here.
pub(crate) fn fluid_system(cfg: &ExperimentConfig) -> Result<System, LabError> {
    Ok(match cfg.experiment.system {
        SystemKind::EulerKorteweg => System::EulerKorteweg(cfg.material()?),
        SystemKind::Euler => System::Euler(cfg.energy_law()?),
        SystemKind::Friction => System::Friction {
            energy: cfg.energy_law()?,
            c_kappa: constant_kappa(cfg)?,
            eps: cfg.experiment.friction_eps,
        },
        SystemKind::CahnHilliard => {
            return Err(LabError::Config(String::from("cahn-hilliard is not a fluid system")));
        }
    })
}

pub(crate) fn constant_kappa(cfg: &ExperimentConfig) -> Result<f64, LabError> {
    cfg.capillarity_law()
        .constant_value()
        .ok_or_else(|| LabError::Config(String::from("this study needs constant capillarity")))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub(crate) struct DiagnosticsRow {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub min_rho: f64,
    pub momentum_x: f64,
    pub momentum_y: f64,
    pub dissipation: f64,
}

pub(crate) fn diagnostics_rows<S>(traj: &Trajectory<S>) -> Vec<DiagnosticsRow> {
    traj.times
        .iter()
        .zip(&traj.diagnostics)
        .map(|(&t, d): (&f64, &Diagnostics)| DiagnosticsRow {
            t,
            mass: d.mass,
            energy: d.energy,
            min_rho: d.min_rho,
            momentum_x: d.momentum[0],
            momentum_y: d.momentum[1],
            dissipation: d.dissipation,
        })
        .collect()
}

/// Unwraps an integration result; on failure the partial diagnostics are
/// written to `partial_diagnostics.csv` in `dir` when given.
pub(crate) fn finish<S>(
    result: Result<Trajectory<S>, IntegrationFailure<S>>,
    context: &str,
    dir: Option<&OutputDir>,
) -> Result<Trajectory<S>, LabError> {
    match result {
        Ok(t) => Ok(t),
        Err(IntegrationFailure { error, partial }) => {
            if let Some(dir) = dir {
                if !partial.is_empty() {
                    dir.write_csv("partial_diagnostics.csv", &diagnostics_rows(&partial))?;
                }
            }
            log::error!("{context}: {error} after {} snapshots", partial.len());
            Err(LabError::Run {
                context: context.to_string(),
                error,
            })
        }
    }
}

/// Fixed step not above `dt_max` that divides `interval`, with the matching
/// snapshot cadence so that snapshots land on `k * interval`. Returns the
/// adjusted config and the step.
pub(crate) fn aligned(cfg: &SolverConfig, dt_max: f64, interval: f64) -> (SolverConfig, f64) {
    let (every, dt) = step_count(dt_max, interval);
    let mut out = cfg.clone();
    out.dt = TimeStep::Fixed(dt);
    out.snapshot_every = every;
    (out, dt)
}

/// Configured step, or the CFL step at `state`.
pub(crate) fn stable_dt(system: &System, state: &FluidState, cfg: &SolverConfig) -> Result<f64, LabError> {
    Ok(match cfg.dt {
        TimeStep::Fixed(dt) => dt,
        TimeStep::Auto => auto_dt(system, state, cfg)?,
    })
}

pub(crate) fn check_interval(t_end: f64, interval: f64) -> Result<(), LabError> {
    let ratio = t_end / interval;
    if !(interval > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
        return Err(LabError::Config(format!(
            "solver.t_end = {t_end} is not a multiple of experiment.snapshot_interval = {interval}"
        )));
    }
    Ok(())
}

/// Runs `system` from `initial_fine` with a step `time` times smaller than
/// `dt`, storing snapshots on the same times as a run with step `dt` and
/// cadence `every`.
pub(crate) fn reference_run(
    system: &System,
    initial_fine: &FluidState,
    cfg: &SolverConfig,
    dt: f64,
    every: usize,
    time: usize,
    dir: Option<&OutputDir>,
) -> Result<Trajectory<FluidState>, LabError> {
    let mut fine_cfg = cfg.clone();
    fine_cfg.dt = TimeStep::Fixed(dt / time as f64);
    fine_cfg.snapshot_every = every * time;
    finish(integrate(system, initial_fine, &fine_cfg), "reference run", dir)
}

pub(crate) fn restrict_trajectory(
    traj: &Trajectory<FluidState>,
    coarse: &TorusGrid,
) -> Result<Trajectory<FluidState>, LabError> {
    let mut out = Trajectory::new(traj.dt);
    for ((t, s), d) in traj.times.iter().zip(&traj.states).zip(&traj.diagnostics) {
        out.push(*t, restrict_state(s, coarse)?, *d);
    }
    Ok(out)
}

pub(crate) fn restrict_state(s: &FluidState, coarse: &TorusGrid) -> Result<FluidState, LabError> {
    if s.grid() == coarse {
        return Ok(s.clone());
    }
    Ok(FluidState::new(s.rho.resample(coarse)?, s.m.resample(coarse)?)?)
}

pub(crate) fn restrict_scalars(
    traj: &Trajectory<ScalarField>,
    coarse: &TorusGrid,
) -> Result<Trajectory<ScalarField>, LabError> {
    let mut out = Trajectory::new(traj.dt);
    for ((t, s), d) in traj.times.iter().zip(&traj.states).zip(&traj.diagnostics) {
        out.push(*t, s.resample(coarse)?, *d);
    }
    Ok(out)
}

/// Result of the refinement check of the smallest-eps point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FloorCheck {
    pub eps: f64,
    pub base: f64,
    pub refined: f64,
    pub relative_change: f64,
    pub flagged: bool,
}

impl FloorCheck {
    pub fn new(eps: f64, base: f64, refined: f64, tolerance: f64) -> Self {
        let relative_change = (refined - base).abs() / base.abs().max(f64::MIN_POSITIVE);
        Self {
            eps,
            base,
            refined,
            relative_change,
            flagged: !(relative_change < tolerance),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub(crate) struct RateRow {
    pub eps: f64,
    pub sup_error: f64,
    pub floor_flag: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub(crate) struct FitRow {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// gnuplot script for a log-log rate plot of `summary.csv`.
pub(crate) fn rate_plot_script(title: &str, ylabel: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set logscale xy\n\
         set key left top\n\
         set title '{title}'\n\
         set xlabel 'eps'\n\
         set ylabel '{ylabel}'\n\
         plot 'summary.csv' using 1:2 skip 1 with linespoints title 'measured', \\\n\
         \x20    'summary.csv' using 1:3 skip 1 with lines title 'fit'\n"
    )
}

/// `(max - min) / min` of positive numbers.
pub(crate) fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (max - min) / min
}

pub(crate) fn max_drift(values: impl Iterator<Item = f64>, reference: f64, scale: f64) -> f64 {
    values.map(|v| (v - reference).abs()).fold(0.0, f64::max) / scale
}

/// Every `stride`-th snapshot, starting with the first.
pub(crate) fn subsample<S: Clone>(traj: &Trajectory<S>, stride: usize) -> Trajectory<S> {
    let mut out = Trajectory::new(traj.dt);
    for i in (0..traj.len()).step_by(stride.max(1)) {
        out.push(traj.times[i], traj.states[i].clone(), traj.diagnostics[i]);
    }
    out
}

/// Allowance when an observed order is compared with the formal order of a
/// scheme: ratio estimates of a second-order error approach 2 from below
/// (1.998 to 1.9999993 in practice), so a literal `>= 2` would reject exact
/// second-order convergence.
pub const ORDER_ESTIMATE_TOL: f64 = 0.01;

/// `log2(coarse / fine)`, the observed order of a residual under halving.
pub(crate) fn halving_order(fine: f64, coarse: f64) -> f64 {
    (coarse / fine).log2()
}

/// Rate fit over the points not flagged by the floor check. With fewer than
/// four points left the curvature is undefined and reported as NaN.
pub(crate) fn fit_unflagged(eps: &[f64], err: &[f64], flags: &[bool]) -> Result<RateFit, LabError> {
    let (x, y): (Vec<f64>, Vec<f64>) = eps
        .iter()
        .zip(err)
        .zip(flags)
        .filter(|(_, &flag)| !flag)
        .map(|((&x, &y), _)| (x, y))
        .unzip();
    if x.len() >= 4 {
        return Ok(fit_rate(&x, &y)?);
    }
    log::warn!("only {} unflagged points; fitting without a curvature estimate", x.len());
    let line = fit_loglog(&x, &y)?;
    Ok(RateFit {
        eps_values: x,
        errors: y,
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        curvature: f64::NAN,
        curvature_flag: false,
    })
}
