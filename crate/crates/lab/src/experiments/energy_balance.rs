//! Conservation of mass, momentum and total energy along an EK run, and the
//! time-refinement order of the energy drift.
//!
//! The spatial semi-discretization conserves energy exactly, so the drift is
//! pure time-integration error. At production resolution it sits near round-off
//! and has no measurable order; the order is therefore measured on a coarse
//! grid (`experiment.order_points`) where steps up to the dispersive limit are
//! large enough to resolve it.

use korteweg_core::dynamics::{integrate, TimeStep, Trajectory};
use korteweg_core::rate::fit_loglog;
use korteweg_core::FluidState;
use serde::Serialize;

use super::{diagnostics_rows, finish, fluid_system, Check};
use crate::config::ExperimentConfig;
use crate::output::OutputDir;
use crate::{parallel, LabError};

pub const MASS_TOL: f64 = 1e-12;
pub const MOMENTUM_TOL: f64 = 1e-10;
pub const ENERGY_TOL: f64 = 1e-8;
pub const MIN_ORDER: f64 = 3.5;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Drifts {
    pub mass: f64,
    pub momentum: f64,
    pub energy: f64,
}

impl Drifts {
    /// Maximal relative drifts over the snapshots. Momentum is measured
    /// against `max(|P(0)|, int |m(0)|)` since the total momentum is often 0.
    pub fn of(traj: &Trajectory<FluidState>) -> Result<Self, LabError> {
        let d0 = traj.diagnostics[0];
        let state0 = &traj.states[0];
        let m_abs: f64 = (0..state0.m.dim())
            .map(|a| state0.m.component_field(a).map(f64::abs).integrate())
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let p_scale = d0.momentum[0].abs().max(d0.momentum[1].abs()).max(m_abs).max(f64::MIN_POSITIVE);
        let momentum = (0..2)
            .map(|a| traj.max_drift(|d| d.momentum[a], p_scale))
            .fold(0.0, f64::max);
        Ok(Self {
            mass: traj.max_drift(|d| d.mass, d0.mass.abs()),
            momentum,
            energy: traj.max_drift(|d| d.energy, d0.energy.abs()),
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OrderRow {
    pub dt: f64,
    pub energy_drift: f64,
}

#[derive(Debug, Clone)]
pub struct EnergyBalanceReport {
    pub dt: f64,
    pub drifts: Drifts,
    pub order_rows: Vec<OrderRow>,
    pub order: f64,
}

impl EnergyBalanceReport {
    pub fn checks(&self) -> Vec<Check> {
        let d = &self.drifts;
        vec![
            Check::new("mass drift", d.mass <= MASS_TOL, format!("{:.3e} <= {MASS_TOL:e}", d.mass)),
            Check::new(
                "momentum drift",
                d.momentum <= MOMENTUM_TOL,
                format!("{:.3e} <= {MOMENTUM_TOL:e}", d.momentum),
            ),
            Check::new(
                "energy drift",
                d.energy <= ENERGY_TOL,
                format!("{:.3e} <= {ENERGY_TOL:e} (dt = {:.3e})", d.energy, self.dt),
            ),
            Check::new(
                "energy drift order",
                self.order >= MIN_ORDER,
                format!("{:.3} >= {MIN_ORDER}", self.order),
            ),
        ]
    }
}

pub fn run(cfg: &ExperimentConfig, out: &OutputDir, jobs: usize) -> Result<EnergyBalanceReport, LabError> {
    let system = fluid_system(cfg)?;
    let solver = cfg.solver_config();
    let e = &cfg.experiment;
    let coarse = cfg.grid_with(e.order_points)?;
    let coarse_state = cfg.initial_state(&coarse)?;

    // Job 0 is the production run, the rest the coarse refinement ladder.
    let jobs_list: Vec<Option<f64>> = std::iter::once(None).chain(e.order_dts.iter().copied().map(Some)).collect();
    let results = parallel::map(&jobs_list, jobs, |job| -> Result<Trajectory<FluidState>, LabError> {
        match job {
            None => {
                let grid = cfg.grid()?;
                finish(integrate(&system, &cfg.initial_state(&grid)?, &solver), "energy run", Some(out))
            }
            Some(dt) => {
                let mut c = solver.clone();
                c.dt = TimeStep::Fixed(*dt);
                finish(integrate(&system, &coarse_state, &c), &format!("order run dt = {dt:e}"), None)
            }
        }
    });
    let mut results = results.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter();
    let main = results.next().expect("production run");
    out.write_csv("diagnostics.csv", &diagnostics_rows(&main))?;
    let drifts = Drifts::of(&main)?;

    let order_rows: Vec<OrderRow> = results
        .zip(&e.order_dts)
        .map(|(traj, &dt)| -> Result<OrderRow, LabError> {
            Ok(OrderRow {
                dt,
                energy_drift: Drifts::of(&traj)?.energy,
            })
        })
        .collect::<Result<_, _>>()?;
    out.write_csv("order.csv", &order_rows)?;
    let dts: Vec<f64> = order_rows.iter().map(|r| r.dt).collect();
    let drift: Vec<f64> = order_rows.iter().map(|r| r.energy_drift.max(f64::MIN_POSITIVE)).collect();
    let order = fit_loglog(&dts, &drift)?.slope;
    out.write_csv("summary.csv", &[drifts])?;
    log::info!("energy drift {:.3e}, order {order:.3}", drifts.energy);
    Ok(EnergyBalanceReport {
        dt: main.dt,
        drifts,
        order_rows,
        order,
    })
}
