//! Large friction: a Cahn-Hilliard reference lifted to the friction system,
//! EKF runs from the well-prepared lifted data, and the rates of `Psi_eps` and
//! of the lift defect `E_bar`.

use korteweg_core::dynamics::{integrate, integrate_ch, Scheme, System, Trajectory};
use korteweg_core::rate::fit_loglog;
use korteweg_core::relative::{ch_lift, check_time_grids, reduced_relative_energy, LiftTimeDerivative};
use korteweg_core::{CapillarityLaw, FluidState, Material, RateFit, ScalarField, TorusGrid};
use serde::Serialize;

use super::capillarity::write_rate_outputs;
use super::{aligned, check_interval, constant_kappa, finish, restrict_scalars, stable_dt, fit_unflagged, Check, FloorCheck};
use crate::config::{ChScheme, ExperimentConfig};
use crate::output::OutputDir;
use crate::{parallel, LabError};

pub const PSI0_TOL: f64 = 1e-14;
pub const MIN_SLOPE: f64 = 3.0;
pub const DEFECT_SLOPE: f64 = 1.0;
pub const DEFECT_SLOPE_TOL: f64 = 0.15;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PsiRow {
    pub t: f64,
    pub psi: f64,
    pub e_bar_max: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpsSummary {
    pub eps: f64,
    pub psi0: f64,
    pub sup_psi: f64,
    pub e_bar_sup: f64,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct FrictionReport {
    pub runs: Vec<EpsSummary>,
    pub floor: Option<FloorCheck>,
    pub fit: RateFit,
    pub defect_slope: f64,
}

impl FrictionReport {
    pub fn checks(&self) -> Vec<Check> {
        let psi0 = self.runs.iter().map(|r| r.psi0).fold(0.0, f64::max);
        let sups: Vec<f64> = self.runs.iter().map(|r| r.sup_psi).collect();
        let decreasing = sups.windows(2).all(|w| w[1] < w[0]);
        let floor = match self.floor {
            Some(f) if f.flagged => format!(
                "; eps = {:e} flagged (refined change {:.3e}) and excluded",
                f.eps, f.relative_change
            ),
            Some(f) => format!("; floor check change {:.3e}", f.relative_change),
            None => String::new(),
        };
        vec![
            Check::new("well-prepared data", psi0 <= PSI0_TOL, format!("max Psi(0) = {psi0:.3e} <= {PSI0_TOL:e}")),
            Check::new(
                "sup Psi strictly decreasing",
                decreasing,
                sups.iter().map(|s| format!("{s:.3e}")).collect::<Vec<_>>().join(" > "),
            ),
            Check::new(
                "Psi rate",
                self.fit.slope >= MIN_SLOPE,
                format!("slope {:.4} >= {MIN_SLOPE}, r^2 {:.5}{floor}", self.fit.slope, self.fit.r_squared),
            ),
            Check::new(
                "lift defect rate",
                (self.defect_slope - DEFECT_SLOPE).abs() <= DEFECT_SLOPE_TOL,
                format!("slope {:.4} in {DEFECT_SLOPE}+-{DEFECT_SLOPE_TOL}", self.defect_slope),
            ),
        ]
    }
}

/// Cahn-Hilliard reference on `grid`, snapshots every `interval`.
fn ch_reference(cfg: &ExperimentConfig, grid: &TorusGrid, out: &OutputDir) -> Result<Trajectory<ScalarField>, LabError> {
    let e = &cfg.experiment;
    let energy = cfg.energy_law()?;
    let c_kappa = constant_kappa(cfg)?;
    let rho0 = cfg.initial_density(grid)?;
    let mut solver = cfg.solver_config();
    solver.scheme = match e.ch_scheme {
        ChScheme::Rk4 => Scheme::Rk4,
        ChScheme::Imex => Scheme::ImexCh,
    };
    let dt_max = e
        .ch_dt
        .unwrap_or_else(|| korteweg_core::dynamics::auto_dt_ch(&rho0, &energy, c_kappa, &solver));
    let (ch_cfg, dt) = aligned(&solver, dt_max, e.snapshot_interval);
    log::info!("cahn-hilliard reference: N = {}, dt = {dt:e}", grid.points_per_axis());
    finish(integrate_ch(&rho0, &energy, c_kappa, &ch_cfg), "cahn-hilliard reference", Some(out))
}

struct EpsRun {
    rows: Vec<PsiRow>,
    summary: EpsSummary,
}

fn run_eps(
    cfg: &ExperimentConfig,
    ch: &Trajectory<ScalarField>,
    eps: f64,
    dir: &OutputDir,
) -> Result<EpsRun, LabError> {
    let energy = cfg.energy_law()?;
    let c_kappa = constant_kappa(cfg)?;
    let floor = cfg.solver.vacuum_floor;
    let lift = ch_lift(ch, &energy, c_kappa, eps, floor, LiftTimeDerivative::Centered)?;
    let lifted = lift.lifted_trajectory(ch, &energy, c_kappa)?;
    let system = System::Friction { energy, c_kappa, eps };
    let initial: &FluidState = &lifted.states[0];
    let solver = cfg.solver_config();
    let dt_max = stable_dt(&system, initial, &solver)?;
    let (run_cfg, dt) = aligned(&solver, dt_max, cfg.experiment.snapshot_interval);
    let traj = finish(integrate(&system, initial, &run_cfg), &format!("friction run eps = {eps:e}"), Some(dir))?;
    check_time_grids(&traj.times, &lifted.times)?;
    // The friction energy is the EK energy with eps = 1 in the rescaled variables.
    let material = Material::new(energy, CapillarityLaw::Constant(c_kappa), 1.0)?.with_vacuum_floor(floor);
    let rows = traj
        .states
        .iter()
        .zip(&lifted.states)
        .zip(traj.times.iter().zip(&lift.e_bar_max))
        .map(|((s, r), (&t, &e_bar_max))| {
            Ok(PsiRow {
                t,
                psi: reduced_relative_energy(s, r, &material)?,
                e_bar_max,
            })
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    let summary = EpsSummary {
        eps,
        psi0: rows[0].psi,
        sup_psi: rows.iter().map(|r| r.psi).fold(0.0, f64::max),
        e_bar_sup: lift.e_bar_sup(),
        dt,
    };
    dir.write_csv("psi.csv", &rows)?;
    Ok(EpsRun { rows, summary })
}

pub fn run(cfg: &ExperimentConfig, out: &OutputDir, jobs: usize) -> Result<FrictionReport, LabError> {
    let e = &cfg.experiment;
    check_interval(cfg.solver.t_end, e.snapshot_interval)?;
    let grid = cfg.grid()?;
    let refined = cfg.grid_with(cfg.grid.points * 2)?;
    let fine_points = cfg.grid.points * e.reference_refinement.max(2);
    let fine = cfg.grid_with(fine_points)?;

    let ch_fine = ch_reference(cfg, &fine, out)?;
    let ch = restrict_scalars(&ch_fine, &grid)?;
    let ch_refined = restrict_scalars(&ch_fine, &refined)?;
    let smallest = *e.eps_list.last().expect("validated");

    let mut jobs_list: Vec<(f64, bool)> = e.eps_list.iter().map(|&eps| (eps, false)).collect();
    if e.floor_check {
        jobs_list.push((smallest, true));
    }
    let runs = parallel::map(&jobs_list, jobs, |&(eps, is_floor)| -> Result<EpsRun, LabError> {
        let name = if is_floor { String::from("floor") } else { format!("eps_{eps:e}") };
        let dir = out.subdir(&name)?;
        run_eps(cfg, if is_floor { &ch_refined } else { &ch }, eps, &dir)
    });
    let mut runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let floor_run = if e.floor_check { runs.pop() } else { None };

    let eps: Vec<f64> = runs.iter().map(|r| r.summary.eps).collect();
    let sups: Vec<f64> = runs.iter().map(|r| r.summary.sup_psi).collect();
    let floor = floor_run.map(|f| FloorCheck::new(smallest, sups[sups.len() - 1], f.summary.sup_psi, e.floor_tolerance));
    let flags: Vec<bool> = eps.iter().map(|&x| floor.is_some_and(|f| f.flagged && f.eps == x)).collect();
    let fit = fit_unflagged(&eps, &sups, &flags)?;
    let defects: Vec<f64> = runs.iter().map(|r| r.summary.e_bar_sup).collect();
    let defect_slope = fit_loglog(&eps, &defects)?.slope;

    let summaries: Vec<EpsSummary> = runs.iter().map(|r| r.summary).collect();
    out.write_csv("runs.csv", &summaries)?;
    write_rate_outputs(out, &eps, &sups, &flags, &fit, floor)?;
    log::info!(
        "friction: slope {:.3}, defect slope {defect_slope:.3}, {} snapshots per run",
        fit.slope,
        runs.first().map_or(0, |r| r.rows.len())
    );
    Ok(FrictionReport {
        runs: summaries,
        floor,
        fit,
        defect_slope,
    })
}
