//! Vanishing capillarity: EK runs with shrinking `eps` against one Euler
//! reference from the same initial data, and the rate of the sup-in-time
//! relative functional.

use korteweg_core::dynamics::{integrate, System, Trajectory};
use korteweg_core::relative::{check_time_grids, ek_relative_energy, euler_relative_energy};
use korteweg_core::{FluidState, Material, RateFit, TorusGrid};
use serde::Serialize;

use super::{
    aligned, check_interval, finish, rate_plot_script, reference_run, restrict_trajectory, stable_dt, fit_unflagged, Check,
    FitRow,
    FloorCheck, RateRow,
};
use crate::config::{ExperimentConfig, Setting};
use crate::output::OutputDir;
use crate::{parallel, LabError};

pub const SET1_SLOPE: [f64; 2] = [1.8, 2.2];
pub const SET1_R2: f64 = 0.99;
pub const SET2_MIN_SLOPE: f64 = 0.9;
pub const SET2_R2: f64 = 0.98;
/// Default bound on `max |grad u|` growth in the Euler reference.
pub const REFERENCE_GRADIENT_GROWTH: f64 = 50.0;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FunctionalRow {
    pub t: f64,
    pub functional: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SummaryRow {
    pub eps: f64,
    pub sup_error: f64,
    pub fitted: f64,
    pub floor_flag: bool,
}

#[derive(Debug, Clone)]
pub struct CapillarityReport {
    pub setting: Setting,
    pub eps: Vec<f64>,
    pub sup_errors: Vec<f64>,
    pub floor: Option<FloorCheck>,
    pub fit: RateFit,
}

impl CapillarityReport {
    pub fn checks(&self) -> Vec<Check> {
        let fit = &self.fit;
        let flagged = self.floor.is_some_and(|f| f.flagged);
        let floor_detail = match self.floor {
            Some(f) => format!(
                "eps = {:e}: refined functional changes by {:.3e}",
                f.eps, f.relative_change
            ),
            None => String::from("floor check disabled"),
        };
        match self.setting {
            Setting::Set1 => vec![
                Check::new(
                    "Set1 slope",
                    (SET1_SLOPE[0]..=SET1_SLOPE[1]).contains(&fit.slope),
                    format!("{:.4} in [{}, {}]", fit.slope, SET1_SLOPE[0], SET1_SLOPE[1]),
                ),
                Check::new("Set1 r^2", fit.r_squared >= SET1_R2, format!("{:.5} >= {SET1_R2}", fit.r_squared)),
                Check::new("Set1 no floor flags", !flagged && !fit.curvature_flag, {
                    format!("{floor_detail}; curvature {:.3}", fit.curvature)
                }),
            ],
            Setting::Set2 => vec![
                Check::new(
                    "Set2 slope",
                    fit.slope >= SET2_MIN_SLOPE,
                    format!("{:.4} >= {SET2_MIN_SLOPE}", fit.slope),
                ),
                Check::new("Set2 r^2", fit.r_squared >= SET2_R2, format!("{:.5} >= {SET2_R2}", fit.r_squared)),
            ],
        }
    }
}

/// The setting's relative functional between an EK^eps snapshot and the Euler reference.
pub fn functional(setting: Setting, state: &FluidState, reference: &FluidState, material: &Material) -> Result<f64, LabError> {
    Ok(match setting {
        Setting::Set1 => ek_relative_energy(state, reference, material)?.total,
        Setting::Set2 => euler_relative_energy(state, reference, material)?,
    })
}

fn functional_series(
    setting: Setting,
    candidate: &Trajectory<FluidState>,
    reference: &Trajectory<FluidState>,
    material: &Material,
) -> Result<Vec<FunctionalRow>, LabError> {
    check_time_grids(&candidate.times, &reference.times)?;
    candidate
        .states
        .iter()
        .zip(&reference.states)
        .zip(&candidate.times)
        .map(|((s, r), &t)| {
            Ok(FunctionalRow {
                t,
                functional: functional(setting, s, r, material)?,
            })
        })
        .collect()
}

fn sup(rows: &[FunctionalRow]) -> f64 {
    rows.iter().map(|r| r.functional).fold(0.0, f64::max)
}

pub fn run(cfg: &ExperimentConfig, out: &OutputDir, jobs: usize) -> Result<CapillarityReport, LabError> {
    let e = &cfg.experiment;
    let setting = e.setting.expect("validated");
    let solver = cfg.solver_config();
    check_interval(solver.t_end, e.snapshot_interval)?;
    let grid = cfg.grid()?;
    let fine = cfg.grid_with(cfg.grid.points * e.reference_refinement)?;
    let refined = cfg.grid_with(cfg.grid.points * 2)?;
    let smallest = *e.eps_list.last().expect("validated");

    // Euler reference on the fine grid, stored on the snapshot-interval grid.
    let euler = System::Euler(cfg.energy_law()?);
    let mut ref_cfg = solver.clone();
    ref_cfg.max_gradient_growth.get_or_insert(REFERENCE_GRADIENT_GROWTH);
    let dt_euler = stable_dt(&euler, &cfg.initial_state(&grid)?, &ref_cfg)?;
    let (ref_aligned, dt_ref) = aligned(&ref_cfg, dt_euler, e.snapshot_interval);
    let reference_fine = reference_run(
        &euler,
        &cfg.initial_state(&fine)?,
        &ref_cfg,
        dt_ref,
        ref_aligned.snapshot_every,
        e.reference_time_refinement,
        Some(out),
    )?;
    let reference = restrict_trajectory(&reference_fine, &grid)?;

    // One job per eps, plus the floor rerun of the smallest eps at 2N.
    let mut jobs_list: Vec<(f64, TorusGrid, String)> = e
        .eps_list
        .iter()
        .map(|&eps| (eps, grid.clone(), format!("eps_{eps:e}")))
        .collect();
    if e.floor_check {
        jobs_list.push((smallest, refined.clone(), String::from("floor")));
    }
    let runs = parallel::map(&jobs_list, jobs, |(eps, g, name)| -> Result<Vec<FunctionalRow>, LabError> {
        let dir = out.subdir(name)?;
        let material = cfg.material_with_eps(*eps)?;
        let system = System::EulerKorteweg(material);
        let initial = cfg.initial_state(g)?;
        let dt_max = stable_dt(&system, &initial, &solver)?;
        let (run_cfg, _) = aligned(&solver, dt_max, e.snapshot_interval);
        let traj = finish(integrate(&system, &initial, &run_cfg), &format!("EK run eps = {eps:e}"), Some(&dir))?;
        let reference = if g == &grid {
            reference.clone()
        } else {
            restrict_trajectory(&reference_fine, g)?
        };
        let rows = functional_series(setting, &traj, &reference, &material)?;
        dir.write_csv("functional.csv", &rows)?;
        Ok(rows)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;

    let sups: Vec<f64> = runs.iter().take(e.eps_list.len()).map(|r| sup(r)).collect();
    let floor = e.floor_check.then(|| {
        let refined = sup(runs.last().expect("floor run"));
        FloorCheck::new(smallest, sups[sups.len() - 1], refined, e.floor_tolerance)
    });
    let flags: Vec<bool> = e
        .eps_list
        .iter()
        .map(|&eps| floor.is_some_and(|f| f.flagged && f.eps == eps))
        .collect();
    let fit = fit_unflagged(&e.eps_list, &sups, &flags)?;

    write_rate_outputs(out, &e.eps_list, &sups, &flags, &fit, floor)?;
    Ok(CapillarityReport {
        setting,
        eps: e.eps_list.clone(),
        sup_errors: sups,
        floor,
        fit,
    })
}

/// `rates.csv`, `fit.csv`, `summary.csv`, `floor.csv` and the optional plot script.
pub(crate) fn write_rate_outputs(
    out: &OutputDir,
    eps: &[f64],
    errors: &[f64],
    flags: &[bool],
    fit: &RateFit,
    floor: Option<FloorCheck>,
) -> Result<(), LabError> {
    let rates: Vec<RateRow> = eps
        .iter()
        .zip(errors)
        .zip(flags)
        .map(|((&eps, &sup_error), &floor_flag)| RateRow {
            eps,
            sup_error,
            floor_flag,
        })
        .collect();
    out.write_csv("rates.csv", &rates)?;
    out.write_csv(
        "fit.csv",
        &[FitRow {
            slope: fit.slope,
            intercept: fit.intercept,
            r2: fit.r_squared,
        }],
    )?;
    let summary: Vec<SummaryRow> = rates
        .iter()
        .map(|r| SummaryRow {
            eps: r.eps,
            sup_error: r.sup_error,
            fitted: (fit.intercept + fit.slope * r.eps.ln()).exp(),
            floor_flag: r.floor_flag,
        })
        .collect();
    out.write_csv("summary.csv", &summary)?;
    if let Some(f) = floor {
        out.write_csv("floor.csv", &[f])?;
    }
    out.write_plot("plot.gp", &rate_plot_script("sup-in-time relative functional", "sup_t error"))?;
    Ok(())
}
