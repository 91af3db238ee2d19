//! Space-time mollification of an EK run: Jensen's inequality for the kinetic
//! density, the continuity residual under snapshot refinement, a negative
//! control with doubled momentum, and the distance to the unmollified density.

use korteweg_core::dynamics::{integrate, Trajectory};
use korteweg_core::mollify::{continuity_residual, extend_negative_time, mollify_pair, MollifiedPair};
use korteweg_core::{FluidState, MollifierSpec};
use serde::Serialize;

use super::{ORDER_ESTIMATE_TOL, aligned, finish, fluid_system, stable_dt, subsample, Check};
use crate::config::ExperimentConfig;
use crate::output::OutputDir;
use crate::{parallel, LabError};

pub const JENSEN_SLACK: f64 = 1e-12;
pub const MIN_ORDER: f64 = 2.0;
pub const CONTROL_FRACTION: f64 = 0.1;
pub const MASS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualRow {
    pub n: usize,
    pub snapshots_per_width: usize,
    pub spacing: f64,
    pub residual: f64,
    pub jensen_excess: f64,
    pub mass_error: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScaleRow {
    pub n: usize,
    pub l2_distance: f64,
    pub residual_order: f64,
    pub control_residual: f64,
    pub div_m_max: f64,
}

#[derive(Debug, Clone)]
pub struct MollifyReport {
    pub residuals: Vec<ResidualRow>,
    pub scales: Vec<ScaleRow>,
}

impl MollifyReport {
    pub fn checks(&self) -> Vec<Check> {
        let jensen = self.residuals.iter().map(|r| r.jensen_excess).fold(f64::NEG_INFINITY, f64::max);
        let mass = self.residuals.iter().map(|r| r.mass_error).fold(0.0, f64::max);
        let order = self.scales.iter().map(|s| s.residual_order).fold(f64::INFINITY, f64::min);
        let control = self
            .scales
            .iter()
            .map(|s| s.control_residual / s.div_m_max)
            .fold(f64::INFINITY, f64::min);
        let distances: Vec<f64> = self.scales.iter().map(|s| s.l2_distance).collect();
        vec![
            Check::new("Jensen inequality", jensen <= JENSEN_SLACK, format!("max excess {jensen:.3e} <= {JENSEN_SLACK:e}")),
            Check::new("mollified mass", mass <= MASS_TOL, format!("{mass:.3e} <= {MASS_TOL:e}")),
            Check::new(
                "continuity residual order",
                order >= MIN_ORDER - ORDER_ESTIMATE_TOL,
                format!("min over scales {order:.4} >= {MIN_ORDER} - {ORDER_ESTIMATE_TOL}"),
            ),
            Check::new(
                "negative control",
                control >= CONTROL_FRACTION,
                format!("residual / max|div m| = {control:.3} >= {CONTROL_FRACTION}"),
            ),
            Check::new(
                "distance decreases with n",
                distances.windows(2).all(|w| w[1] < w[0]),
                distances.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(" > "),
            ),
        ]
    }
}

fn mass_error(pair: &MollifiedPair, mass: f64) -> Result<f64, LabError> {
    let mut worst: f64 = 0.0;
    for rho in &pair.rho {
        worst = worst.max((rho.integrate()? - mass).abs() / mass.abs());
    }
    Ok(worst)
}

fn doubled(traj: &Trajectory<FluidState>) -> Result<Trajectory<FluidState>, LabError> {
    let mut out = Trajectory::new(traj.dt);
    for ((t, s), d) in traj.times.iter().zip(&traj.states).zip(&traj.diagnostics) {
        out.push(*t, FluidState::new(s.rho.clone(), s.m.scale(2.0))?, *d);
    }
    Ok(out)
}

pub fn run(cfg: &ExperimentConfig, out: &OutputDir, jobs: usize) -> Result<MollifyReport, LabError> {
    let e = &cfg.experiment;
    let system = fluid_system(cfg)?;
    let grid = cfg.grid()?;
    let initial = cfg.initial_state(&grid)?;
    let floor = cfg.solver.vacuum_floor;

    // One run at the finest spacing; coarser spacings are subsamples.
    let n_max = *e.mollifier_scales.iter().max().expect("validated");
    let k_max = *e.snapshots_per_width.iter().max().expect("validated");
    let base = n_max * k_max;
    for &n in &e.mollifier_scales {
        for &k in &e.snapshots_per_width {
            if base % (n * k) != 0 {
                return Err(LabError::Config(format!(
                    "snapshot spacing 1/({k}*{n}) is not a multiple of the finest spacing 1/{base}"
                )));
            }
        }
    }
    let solver = cfg.solver_config();
    let dt_max = stable_dt(&system, &initial, &solver)?;
    let (run_cfg, dt) = aligned(&solver, dt_max, 1.0 / base as f64);
    log::info!("mollify-check: dt = {dt:e}, finest snapshot spacing 1/{base}");
    let traj = finish(integrate(&system, &initial, &run_cfg), "mollify run", Some(out))?;
    let control_traj = doubled(&traj)?;
    let mass = initial.mass()?;
    let div_m_max = traj
        .states
        .iter()
        .map(|s| Ok(s.m.divergence()?.max_abs()))
        .collect::<Result<Vec<f64>, LabError>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let mut ks = e.snapshots_per_width.clone();
    ks.sort_unstable_by(|a, b| b.cmp(a));
    let pairs: Vec<(usize, usize)> = e
        .mollifier_scales
        .iter()
        .flat_map(|&n| ks.iter().map(move |&k| (n, k)))
        .collect();
    let residuals = parallel::map(&pairs, jobs, |&(n, k)| -> Result<ResidualRow, LabError> {
        let spec = MollifierSpec::new(n)?.with_vacuum_floor(floor);
        let sub = subsample(&traj, base / (n * k));
        let ext = extend_negative_time(&sub, &spec)?;
        let pair = mollify_pair(&ext, &spec)?;
        Ok(ResidualRow {
            n,
            snapshots_per_width: k,
            spacing: 1.0 / (n * k) as f64,
            residual: continuity_residual(&pair)?,
            jensen_excess: pair.jensen_excess(),
            mass_error: mass_error(&pair, mass)?,
        })
    });
    let residuals = residuals.into_iter().collect::<Result<Vec<_>, _>>()?;
    out.write_csv("residuals.csv", &residuals)?;

    let scales = parallel::map(&e.mollifier_scales, jobs, |&n| -> Result<ScaleRow, LabError> {
        let spec = MollifierSpec::new(n)?.with_vacuum_floor(floor);
        let stride = base / (n * ks[0]);
        let ext = extend_negative_time(&subsample(&traj, stride), &spec)?;
        let pair = mollify_pair(&ext, &spec)?;
        let control_ext = extend_negative_time(&subsample(&control_traj, stride), &spec)?;
        let control = continuity_residual(&mollify_pair(&control_ext, &spec)?)?;
        let own: Vec<&ResidualRow> = residuals.iter().filter(|r| r.n == n).collect();
        Ok(ScaleRow {
            n,
            l2_distance: pair.l2_distance(&ext),
            residual_order: (own[1].residual / own[0].residual).ln()
                / (own[0].snapshots_per_width as f64 / own[1].snapshots_per_width as f64).ln(),
            control_residual: control,
            div_m_max,
        })
    });
    let mut scales = scales.into_iter().collect::<Result<Vec<_>, _>>()?;
    scales.sort_by_key(|s| s.n);
    out.write_csv("scales.csv", &scales)?;
    Ok(MollifyReport { residuals, scales })
}
