//! A single run of the configured system: diagnostics and the final state.

use korteweg_core::dynamics::{integrate, integrate_ch, Scheme};
use korteweg_core::{FluidState, ScalarField};
use serde::Serialize;

use super::{constant_kappa, diagnostics_rows, finish, fluid_system, Check};
use crate::config::{ChScheme, ExperimentConfig, SystemKind};
use crate::output::OutputDir;
use crate::LabError;

#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub snapshots: usize,
    pub dt: f64,
    pub final_time: f64,
    pub mass_drift: f64,
    pub energy_change: f64,
}

impl SimulateReport {
    pub fn checks(&self) -> Vec<Check> {
        vec![Check::new(
            "run completed",
            self.snapshots > 0,
            format!("{} snapshots, dt = {:e}, t = {}", self.snapshots, self.dt, self.final_time),
        )]
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct NodeRow {
    x: f64,
    y: f64,
    rho: f64,
    m_x: f64,
    m_y: f64,
}

fn node_rows(rho: &ScalarField, state: Option<&FluidState>) -> Vec<NodeRow> {
    let grid = rho.grid();
    (0..grid.len())
        .map(|n| {
            let [x, y] = grid.coordinates(n);
            let m = |axis: usize| state.filter(|s| axis < s.m.dim()).map_or(0.0, |s| s.m.component(axis)[n]);
            NodeRow {
                x,
                y,
                rho: rho.values()[n],
                m_x: m(0),
                m_y: m(1),
            }
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig, out: &OutputDir) -> Result<SimulateReport, LabError> {
    let grid = cfg.grid()?;
    let solver = cfg.solver_config();
    let (rows, final_rows, dt, times) = if cfg.experiment.system == SystemKind::CahnHilliard {
        let mut solver = solver;
        solver.scheme = match cfg.experiment.ch_scheme {
            ChScheme::Rk4 => Scheme::Rk4,
            ChScheme::Imex => Scheme::ImexCh,
        };
        let rho0 = cfg.initial_density(&grid)?;
        let traj = finish(
            integrate_ch(&rho0, &cfg.energy_law()?, constant_kappa(cfg)?, &solver),
            "cahn-hilliard run",
            Some(out),
        )?;
        let last = traj.last().expect("trajectory holds the initial state");
        (diagnostics_rows(&traj), node_rows(last, None), traj.dt, traj.times.clone())
    } else {
        let system = fluid_system(cfg)?;
        let traj = finish(integrate(&system, &cfg.initial_state(&grid)?, &solver), "run", Some(out))?;
        let last = traj.last().expect("trajectory holds the initial state");
        (diagnostics_rows(&traj), node_rows(&last.rho, Some(last)), traj.dt, traj.times.clone())
    };
    out.write_csv("diagnostics.csv", &rows)?;
    out.write_csv("final_state.csv", &final_rows)?;
    let first = rows[0];
    let last = rows[rows.len() - 1];
    Ok(SimulateReport {
        snapshots: rows.len(),
        dt,
        final_time: *times.last().unwrap_or(&0.0),
        mass_drift: super::max_drift(rows.iter().map(|r| r.mass), first.mass, first.mass.abs()),
        energy_change: last.energy - first.energy,
    })
}
