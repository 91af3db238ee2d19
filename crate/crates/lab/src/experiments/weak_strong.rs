//! Weak-strong stability with a non-convex energy: the reduced relative energy
//! Psi between perturbed runs and a fine-grid reference, its empirical Gronwall
//! bound, and the refinement order of the two relative-energy identities.

use korteweg_core::dynamics::{integrate, System, Trajectory};
use korteweg_core::rate::fit_loglog;
use korteweg_core::relative::{bump_identity_residual, reduced_relative_energy, relative_identity_residual};
use korteweg_core::{FluidState, Material};
use serde::Serialize;

use super::{ORDER_ESTIMATE_TOL, aligned, check_interval, finish, halving_order, reference_run, restrict_trajectory, spread, stable_dt, subsample, Check, FitRow};
use crate::config::ExperimentConfig;
use crate::output::OutputDir;
use crate::{parallel, LabError};

pub const SLOPE_TARGET: f64 = 2.0;
pub const SLOPE_TOL: f64 = 0.1;
pub const MAX_RATIO_SPREAD: f64 = 0.1;
pub const MIN_IDENTITY_ORDER: f64 = 2.0;
/// Relative slack of the Gronwall check, for round-off in `exp(C t)`.
const GRONWALL_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PsiRow {
    pub t: f64,
    pub psi: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AmplitudeSummary {
    pub amplitude: f64,
    pub psi0: f64,
    pub sup_ratio: f64,
    pub c_hat: f64,
    pub bound_holds: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualRow {
    pub spacing: f64,
    pub identity: f64,
    pub bump_identity: f64,
}

#[derive(Debug, Clone)]
pub struct WeakStrongReport {
    pub amplitudes: Vec<AmplitudeSummary>,
    pub psi0_slope: f64,
    pub ratio_spread: f64,
    pub residuals: Vec<ResidualRow>,
    pub identity_order: f64,
    pub bump_order: f64,
    /// `min h''` over the densities the reference visits.
    pub min_h2: f64,
}

impl WeakStrongReport {
    pub fn checks(&self) -> Vec<Check> {
        let bound_fail: Vec<f64> = self.amplitudes.iter().filter(|a| !a.bound_holds).map(|a| a.amplitude).collect();
        vec![
            Check::new(
                "non-convex energy active",
                self.min_h2 < 0.0,
                format!("min h'' on visited densities = {:.4}", self.min_h2),
            ),
            Check::new(
                "Psi(0) ~ amplitude^2",
                (self.psi0_slope - SLOPE_TARGET).abs() <= SLOPE_TOL,
                format!("slope {:.4} in {SLOPE_TARGET}+-{SLOPE_TOL}", self.psi0_slope),
            ),
            Check::new(
                "sup Psi/Psi(0) amplitude-independent",
                self.ratio_spread < MAX_RATIO_SPREAD,
                format!("spread {:.3e} < {MAX_RATIO_SPREAD}", self.ratio_spread),
            ),
            Check::new(
                "Gronwall bound at every snapshot",
                bound_fail.is_empty(),
                if bound_fail.is_empty() {
                    String::from("holds for every amplitude")
                } else {
                    format!("violated for amplitudes {bound_fail:?}")
                },
            ),
            Check::new(
                "relative energy identity order",
                self.identity_order >= MIN_IDENTITY_ORDER - ORDER_ESTIMATE_TOL,
                format!("{:.4} >= {MIN_IDENTITY_ORDER} - {ORDER_ESTIMATE_TOL}", self.identity_order),
            ),
            Check::new(
                "bump identity order",
                self.bump_order >= MIN_IDENTITY_ORDER - ORDER_ESTIMATE_TOL,
                format!("{:.4} >= {MIN_IDENTITY_ORDER} - {ORDER_ESTIMATE_TOL}", self.bump_order),
            ),
        ]
    }
}

/// `max_k (ln Psi_{k+1} - ln Psi_k) / (t_{k+1} - t_k)`.
pub fn gronwall_constant(times: &[f64], psi: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(psi.windows(2))
        .map(|(t, p)| (p[1].ln() - p[0].ln()) / (t[1] - t[0]))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn psi_series(
    candidate: &Trajectory<FluidState>,
    reference: &Trajectory<FluidState>,
    material: &Material,
) -> Result<Vec<f64>, LabError> {
    korteweg_core::relative::check_time_grids(&candidate.times, &reference.times)?;
    candidate
        .states
        .iter()
        .zip(&reference.states)
        .map(|(s, r)| Ok(reduced_relative_energy(s, r, material)?))
        .collect()
}

pub fn run(cfg: &ExperimentConfig, out: &OutputDir, jobs: usize) -> Result<WeakStrongReport, LabError> {
    let e = &cfg.experiment;
    let material = cfg.material()?;
    let system = System::EulerKorteweg(material);
    let grid = cfg.grid()?;
    let fine = cfg.grid_with(cfg.grid.points * e.reference_refinement)?;
    let solver = cfg.solver_config();
    check_interval(solver.t_end, e.snapshot_interval)?;

    let largest = e.amplitudes.iter().copied().fold(0.0, f64::max);
    let dt_max = stable_dt(&system, &cfg.perturbed_state(&grid, largest)?, &solver)?;
    let (run_cfg, dt) = aligned(&solver, dt_max, e.snapshot_interval);
    log::info!("weak-strong: dt = {dt:e}, {} steps per snapshot", run_cfg.snapshot_every);

    // Job 0 is the reference, the rest the perturbed candidates.
    let runs: Vec<Option<f64>> = std::iter::once(None).chain(e.amplitudes.iter().copied().map(Some)).collect();
    let trajectories = parallel::map(&runs, jobs, |job| -> Result<Trajectory<FluidState>, LabError> {
        match job {
            None => restrict_trajectory(
                &reference_run(
                    &system,
                    &cfg.initial_state(&fine)?,
                    &solver,
                    dt,
                    run_cfg.snapshot_every,
                    e.reference_time_refinement,
                    Some(out),
                )?,
                &grid,
            ),
            Some(a) => finish(
                integrate(&system, &cfg.perturbed_state(&grid, *a)?, &run_cfg),
                &format!("candidate a = {a:e}"),
                Some(out),
            ),
        }
    });
    let mut trajectories = trajectories.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter();
    let reference = trajectories.next().expect("reference run");
    let candidates: Vec<Trajectory<FluidState>> = trajectories.collect();
    let min_h2 = reference
        .states
        .iter()
        .flat_map(|s| s.rho.values().iter().map(|&r| material.energy.d2h(r)))
        .fold(f64::INFINITY, f64::min);

    let mut summaries = Vec::with_capacity(candidates.len());
    for (traj, &a) in candidates.iter().zip(&e.amplitudes) {
        let psi = psi_series(traj, &reference, &material)?;
        let psi0 = psi[0];
        let c_hat = gronwall_constant(&traj.times, &psi);
        let rows: Vec<PsiRow> = traj
            .times
            .iter()
            .zip(&psi)
            .map(|(&t, &p)| PsiRow {
                t,
                psi: p,
                bound: (c_hat * t).exp() * psi0,
            })
            .collect();
        let bound_holds = rows.iter().all(|r| r.psi <= r.bound * (1.0 + GRONWALL_SLACK));
        let sup = psi.iter().copied().fold(0.0, f64::max);
        out.subdir(&format!("a_{a:e}"))?.write_csv("psi.csv", &rows)?;
        summaries.push(AmplitudeSummary {
            amplitude: a,
            psi0,
            sup_ratio: sup / psi0,
            c_hat,
            bound_holds,
        });
    }
    out.write_csv("summary.csv", &summaries)?;

    let amps: Vec<f64> = summaries.iter().map(|s| s.amplitude).collect();
    let psi0: Vec<f64> = summaries.iter().map(|s| s.psi0).collect();
    let fit = fit_loglog(&amps, &psi0)?;
    out.write_csv(
        "fit.csv",
        &[FitRow {
            slope: fit.slope,
            intercept: fit.intercept,
            r2: fit.r_squared,
        }],
    )?;
    let ratios: Vec<f64> = summaries.iter().map(|s| s.sup_ratio).collect();
    let ratio_spread = spread(&ratios);

    // Identity residuals on the largest-amplitude pair under snapshot refinement.
    let idx = e
        .amplitudes
        .iter()
        .position(|&a| a == largest)
        .expect("largest amplitude is in the list");
    let residuals = [1usize, 2, 4]
        .iter()
        .map(|&stride| -> Result<ResidualRow, LabError> {
            let c = subsample(&candidates[idx], stride);
            let r = subsample(&reference, stride);
            Ok(ResidualRow {
                spacing: e.snapshot_interval * stride as f64,
                identity: relative_identity_residual(&c, &r, &material)?,
                bump_identity: bump_identity_residual(&c, &r, &material.energy)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.write_csv("residuals.csv", &residuals)?;
    let identity_order = halving_order(residuals[0].identity, residuals[1].identity);
    let bump_order = halving_order(residuals[0].bump_identity, residuals[1].bump_identity);

    Ok(WeakStrongReport {
        amplitudes: summaries,
        psi0_slope: fit.slope,
        ratio_spread,
        residuals,
        identity_order,
        bump_order,
        min_h2,
    })
}
