//! Spinodal decomposition for Cahn-Hilliard: measured linear growth rates of
//! the most unstable modes against the linearization, and monotone decay of
//! the free energy in the nonlinear coarsening phase.

use korteweg_core::dynamics::{ch_free_energy, ch_growth_rate, ch_imex_step, integrate_ch, Scheme, TimeStep};
use korteweg_core::rate::fit_line;
use korteweg_core::ScalarField;
use serde::Serialize;

use super::{constant_kappa, diagnostics_rows, finish, Check};
use crate::config::ExperimentConfig;
use crate::output::OutputDir;
use crate::LabError;

pub const RATE_TOL: f64 = 0.02;
/// Relative slack for the free energy to count as non-increasing.
pub const ENERGY_SLACK: f64 = 1e-12;
/// Step of the linear-phase run when `experiment.ch_dt` is not set.
pub const DEFAULT_LINEAR_DT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GrowthRow {
    pub k: usize,
    pub wavenumber: f64,
    pub measured: f64,
    pub predicted: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone)]
pub struct SpinodalReport {
    pub growth: Vec<GrowthRow>,
    /// Mode indices ranked by predicted growth, fastest first.
    pub predicted_top: Vec<usize>,
    pub linear_time: f64,
    pub max_energy_increase: f64,
}

impl SpinodalReport {
    pub fn checks(&self) -> Vec<Check> {
        let worst = self.growth.iter().map(|g| g.relative_error).fold(0.0, f64::max);
        let mut measured: Vec<usize> = self.growth.iter().map(|g| g.k).collect();
        let mut top = self.predicted_top.clone();
        measured.sort_unstable();
        top.sort_unstable();
        vec![
            Check::new(
                "measured modes are the most unstable",
                measured == top,
                format!("configured {measured:?}, predicted {top:?}"),
            ),
            Check::new(
                "growth rates match linearization",
                worst <= RATE_TOL,
                format!("max relative error {worst:.3e} <= {RATE_TOL}"),
            ),
            Check::new(
                "free energy non-increasing",
                self.max_energy_increase <= ENERGY_SLACK,
                format!("max relative increase {:.3e} <= {ENERGY_SLACK:e}", self.max_energy_increase),
            ),
        ]
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct AmplitudeRow {
    t: f64,
    k: usize,
    log_amplitude: f64,
}

pub fn run(cfg: &ExperimentConfig, out: &OutputDir) -> Result<SpinodalReport, LabError> {
    let e = &cfg.experiment;
    let grid = cfg.grid()?;
    let energy = cfg.energy_law()?;
    let c_kappa = constant_kappa(cfg)?;
    let rho0 = cfg.initial_density(&grid)?;
    let mean = rho0.integrate()? / grid.volume();
    let period = grid.period(0);
    let wavenumber = |k: usize| std::f64::consts::TAU * k as f64 / period;

    let half = grid.points_per_axis() / 2;
    let mut ranked: Vec<usize> = (1..half).collect();
    ranked.sort_by(|&a, &b| {
        ch_growth_rate(mean, wavenumber(b), &energy, c_kappa).total_cmp(&ch_growth_rate(mean, wavenumber(a), &energy, c_kappa))
    });
    let predicted_top: Vec<usize> = ranked.into_iter().take(e.spinodal_modes.len()).collect();

    // Linear phase: IMEX steps until the deviation from the mean reaches the window.
    let dt = e.ch_dt.unwrap_or(DEFAULT_LINEAR_DT);
    let deviation = |rho: &ScalarField| rho.values().iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let mut rho = rho0.clone();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut logs: Vec<Vec<f64>> = vec![log_amplitudes(&rho, &e.spinodal_modes)];
    while deviation(&rho) < e.linear_window && t < cfg.solver.t_end {
        rho = ch_imex_step(&rho, &energy, c_kappa, dt)?;
        t += dt;
        times.push(t);
        logs.push(log_amplitudes(&rho, &e.spinodal_modes));
    }
    if times.len() < 3 {
        return Err(LabError::Config(format!(
            "initial deviation {:e} already exceeds experiment.linear_window = {:e}",
            deviation(&rho0),
            e.linear_window
        )));
    }
    let mut amp_rows = Vec::new();
    let growth = e
        .spinodal_modes
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let y: Vec<f64> = logs.iter().map(|l| l[j]).collect();
            amp_rows.extend(times.iter().zip(&y).map(|(&t, &log_amplitude)| AmplitudeRow { t, k, log_amplitude }));
            let measured = fit_line(&times, &y).slope;
            let predicted = ch_growth_rate(mean, wavenumber(k), &energy, c_kappa);
            GrowthRow {
                k,
                wavenumber: wavenumber(k),
                measured,
                predicted,
                relative_error: ((measured - predicted) / predicted).abs(),
            }
        })
        .collect::<Vec<_>>();
    out.write_csv("growth.csv", &growth)?;
    out.write_csv("amplitudes.csv", &amp_rows)?;

    // Nonlinear phase from the same data, every step stored.
    let mut solver = cfg.solver_config();
    solver.scheme = Scheme::ImexCh;
    solver.dt = TimeStep::Fixed(dt);
    solver.t_end = e.coarsening_time;
    solver.snapshot_every = 1;
    solver.resolution_tolerance = None;
    let traj = finish(integrate_ch(&rho0, &energy, c_kappa, &solver), "coarsening run", Some(out))?;
    out.write_csv("free_energy.csv", &diagnostics_rows(&traj))?;
    let scale = ch_free_energy(&rho0, &energy, c_kappa)?.abs().max(f64::MIN_POSITIVE);
    let max_energy_increase = traj
        .diagnostics
        .windows(2)
        .map(|w| (w[1].energy - w[0].energy) / scale)
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(SpinodalReport {
        growth,
        predicted_top,
        linear_time: t,
        max_energy_increase,
    })
}

fn log_amplitudes(rho: &ScalarField, modes: &[usize]) -> Vec<f64> {
    let spec = rho.spectrum();
    modes.iter().map(|&k| spec[k].norm().ln()).collect()
}
