//! Experiment configuration: TOML schema, dotted-key overrides and validation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use korteweg_core::constitutive::DEFAULT_VACUUM_FLOOR;
use korteweg_core::dynamics::{FrictionScheme, SolverConfig, TimeStep};
use korteweg_core::{
    set2_check, BumpSpec, CapillarityLaw, EnergyLaw, FluidState, Material, ScalarField, Set2Failure, TorusGrid,
    VectorField,
};
use serde::{Deserialize, Serialize};

use crate::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub energy: EnergyConfig,
    #[serde(default)]
    pub capillarity: CapillarityConfig,
    pub solver: SolverSection,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "one")]
    pub dim: usize,
    pub points: usize,
    #[serde(default = "unit")]
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    #[serde(default = "unit")]
    pub c: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bump: Option<BumpConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub amplitude: f64,
    pub support: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapillarityKind {
    Constant,
    Qhd,
    Power,
}

/// `kappa(rho)`: `coefficient` (constant), `1/rho` (qhd) or
/// `coefficient * rho^exponent` (power), multiplied by `eps` in the equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapillarityConfig {
    #[serde(default = "constant_law")]
    pub law: CapillarityKind,
    #[serde(default = "default_coefficient")]
    pub coefficient: f64,
    #[serde(default)]
    pub exponent: f64,
    #[serde(default = "unit")]
    pub eps: f64,
}

impl Default for CapillarityConfig {
    fn default() -> Self {
        Self {
            law: CapillarityKind::Constant,
            coefficient: default_coefficient(),
            exponent: 0.0,
            eps: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrictionSchemeConfig {
    IntegratingFactor,
    Strang,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub t_end: f64,
    /// Fixed step; adaptive (CFL) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "cfl_advective")]
    pub cfl_advective: f64,
    #[serde(default = "cfl_dispersive")]
    pub cfl_dispersive: f64,
    #[serde(default = "snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default = "friction_scheme")]
    pub friction_scheme: FrictionSchemeConfig,
    #[serde(default)]
    pub conservative_form: bool,
    #[serde(default)]
    pub dealias: bool,
    #[serde(default = "resolution_tolerance", skip_serializing_if = "Option::is_none")]
    pub resolution_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_gradient_growth: Option<f64>,
    #[serde(default = "vacuum_floor")]
    pub vacuum_floor: f64,
}

/// One real Fourier mode `cos * cos(k.x') + sin * sin(k.x')` with
/// `x' = 2 pi x / period`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
    /// Velocity component the mode belongs to; ignored for densities.
    #[serde(default)]
    pub axis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    #[serde(default = "unit")]
    pub rho_mean: f64,
    #[serde(default)]
    pub rho: Vec<FourierMode>,
    #[serde(default)]
    pub u: Vec<FourierMode>,
}

impl Default for InitialData {
    fn default() -> Self {
        Self {
            rho_mean: 1.0,
            rho: Vec::new(),
            u: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    EulerKorteweg,
    Euler,
    Friction,
    CahnHilliard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    Set1,
    Set2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChScheme {
    Rk4,
    Imex,
}

/// Experiment knobs. Each subcommand reads the fields it needs; the rest keep
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// System integrated by `simulate`.
    #[serde(default = "system")]
    pub system: SystemKind,
    /// Friction scale for `simulate` with the friction system.
    #[serde(default = "unit")]
    pub friction_eps: f64,
    /// Capillarity or friction scales of a rate study, strictly decreasing.
    #[serde(default)]
    pub eps_list: Vec<f64>,
    /// Perturbation amplitudes of the weak-strong study.
    #[serde(default)]
    pub amplitudes: Vec<f64>,
    #[serde(default)]
    pub perturbation_rho: Vec<FourierMode>,
    #[serde(default)]
    pub perturbation_u: Vec<FourierMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<Setting>,
    /// Density interval on which Set2 admissibility is checked; defaults to
    /// `[min rho_0 / 2, 2 max rho_0]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_range: Option<[f64; 2]>,
    /// Spatial refinement factor of reference runs.
    #[serde(default = "two")]
    pub reference_refinement: usize,
    /// Temporal refinement factor of reference runs.
    #[serde(default = "four")]
    pub reference_time_refinement: usize,
    /// Rerun the smallest eps at twice the resolution and flag points whose
    /// functional moves by more than `floor_tolerance`.
    #[serde(default = "yes")]
    pub floor_check: bool,
    #[serde(default = "floor_tolerance")]
    pub floor_tolerance: f64,
    /// Grid of the energy-balance order study.
    #[serde(default = "order_points")]
    pub order_points: usize,
    /// Fixed steps of the energy-balance order study, each half the previous.
    #[serde(default = "order_dts")]
    pub order_dts: Vec<f64>,
    /// Time between stored snapshots in the friction study.
    #[serde(default = "snapshot_interval")]
    pub snapshot_interval: f64,
    #[serde(default = "ch_scheme")]
    pub ch_scheme: ChScheme,
    /// Step of the Cahn-Hilliard reference; a stable default is derived when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ch_dt: Option<f64>,
    /// Unstable modes whose growth rates are measured.
    #[serde(default = "spinodal_modes")]
    pub spinodal_modes: Vec<usize>,
    /// Growth-rate fits use snapshots while the mode amplitude stays below this.
    #[serde(default = "linear_window")]
    pub linear_window: f64,
    /// Length of the nonlinear run that checks free-energy decay.
    #[serde(default = "coarsening_time")]
    pub coarsening_time: f64,
    /// Mollifier scales of the mollification check.
    #[serde(default = "mollifier_scales")]
    pub mollifier_scales: Vec<usize>,
    /// Snapshots per kernel width, refined by doubling.
    #[serde(default = "snapshots_per_width")]
    pub snapshots_per_width: Vec<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        toml::from_str("").expect("all experiment fields have defaults")
    }
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn four() -> usize {
    4
}
fn unit() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn constant_law() -> CapillarityKind {
    CapillarityKind::Constant
}
fn default_coefficient() -> f64 {
    0.01
}
fn cfl_advective() -> f64 {
    0.4
}
fn cfl_dispersive() -> f64 {
    0.2
}
fn snapshot_every() -> usize {
    10
}
fn friction_scheme() -> FrictionSchemeConfig {
    FrictionSchemeConfig::IntegratingFactor
}
fn resolution_tolerance() -> Option<f64> {
    Some(1e-4)
}
fn vacuum_floor() -> f64 {
    DEFAULT_VACUUM_FLOOR
}
fn system() -> SystemKind {
    SystemKind::EulerKorteweg
}
fn floor_tolerance() -> f64 {
    0.1
}
fn order_points() -> usize {
    32
}
fn order_dts() -> Vec<f64> {
    vec![2e-3, 1e-3, 5e-4]
}
fn snapshot_interval() -> f64 {
    0.01
}
fn ch_scheme() -> ChScheme {
    ChScheme::Rk4
}
fn spinodal_modes() -> Vec<usize> {
    vec![7, 6, 8]
}
fn linear_window() -> f64 {
    1e-4
}
fn coarsening_time() -> f64 {
    1.0
}
fn mollifier_scales() -> Vec<usize> {
    vec![4, 8, 16, 32]
}
fn snapshots_per_width() -> Vec<usize> {
    vec![8, 16, 32, 64]
}

/// Experiment selected on the command line; decides which validation rules apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Simulate,
    EnergyBalance,
    WeakStrong,
    Capillarity,
    Friction,
    Spinodal,
    MollifyCheck,
}

impl Study {
    pub const ALL: [Study; 7] = [
        Study::Simulate,
        Study::EnergyBalance,
        Study::WeakStrong,
        Study::Capillarity,
        Study::Friction,
        Study::Spinodal,
        Study::MollifyCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::Simulate => "simulate",
            Study::EnergyBalance => "energy-balance",
            Study::WeakStrong => "weak-strong",
            Study::Capillarity => "capillarity",
            Study::Friction => "friction",
            Study::Spinodal => "spinodal",
            Study::MollifyCheck => "mollify-check",
        }
    }
}

/// Reads a config file, applies `key=value` overrides (dotted keys, TOML
/// values; bare words are taken as strings) and deserializes the result.
pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, LabError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text, overrides).map_err(|e| match e {
        LabError::Config(msg) => LabError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse(text: &str, overrides: &[String]) -> Result<ExperimentConfig, LabError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
    for item in overrides {
        apply_override(&mut table, item)?;
    }
    ExperimentConfig::deserialize(toml::Value::Table(table)).map_err(|e| {
        // Deserializing the merged table loses source positions; when the file
        // alone fails the same way, report that error with its line.
        match toml::from_str::<ExperimentConfig>(text) {
            Err(direct) if direct.message() == e.message() => LabError::Config(direct.to_string()),
            _ => LabError::Config(e.to_string()),
        }
    })
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), LabError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| LabError::Config(format!("override `{item}` is not of the form key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(LabError::Config(format!("override key `{key}` has an empty segment")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| LabError::Config(format!("override `{key}`: `{part}` is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<TorusGrid, LabError> {
        self.grid_with(self.grid.points)
    }

    pub fn grid_with(&self, points: usize) -> Result<TorusGrid, LabError> {
        let period = vec![self.grid.period; self.grid.dim];
        Ok(TorusGrid::new(self.grid.dim, points, &period)?)
    }

    pub fn energy_law(&self) -> Result<EnergyLaw, LabError> {
        let bump = self
            .energy
            .bump
            .as_ref()
            .map(|b| BumpSpec::new(b.amplitude, b.support[0], b.support[1]))
            .transpose()?;
        Ok(EnergyLaw::new(self.energy.c, self.energy.gamma, bump)?)
    }

    pub fn capillarity_law(&self) -> CapillarityLaw {
        let c = &self.capillarity;
        match c.law {
            CapillarityKind::Constant => CapillarityLaw::Constant(c.coefficient),
            CapillarityKind::Qhd => CapillarityLaw::Qhd,
            CapillarityKind::Power => CapillarityLaw::Power {
                coefficient: c.coefficient,
                exponent: c.exponent,
            },
        }
    }

    pub fn material(&self) -> Result<Material, LabError> {
        self.material_with_eps(self.capillarity.eps)
    }

    pub fn material_with_eps(&self, eps: f64) -> Result<Material, LabError> {
        Ok(Material::new(self.energy_law()?, self.capillarity_law(), eps)?.with_vacuum_floor(self.solver.vacuum_floor))
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        let mut cfg = SolverConfig::new(s.t_end);
        cfg.dt = s.dt.map_or(TimeStep::Auto, TimeStep::Fixed);
        cfg.cfl_advective = s.cfl_advective;
        cfg.cfl_dispersive = s.cfl_dispersive;
        cfg.snapshot_every = s.snapshot_every;
        cfg.friction = match s.friction_scheme {
            FrictionSchemeConfig::IntegratingFactor => FrictionScheme::IntegratingFactor,
            FrictionSchemeConfig::Strang => FrictionScheme::Strang,
            FrictionSchemeConfig::Explicit => FrictionScheme::Explicit,
        };
        cfg.conservative_form = s.conservative_form;
        cfg.dealias = s.dealias;
        cfg.resolution_tolerance = s.resolution_tolerance;
        cfg.max_gradient_growth = s.max_gradient_growth;
        cfg.vacuum_floor = s.vacuum_floor;
        cfg
    }

    /// Initial density on `grid`.
    pub fn initial_density(&self, grid: &TorusGrid) -> Result<ScalarField, LabError> {
        let mut rho = synthesize(grid, &self.initial.rho)?;
        rho.values_mut().iter_mut().for_each(|v| *v += self.initial.rho_mean);
        Ok(rho)
    }

    pub fn initial_velocity(&self, grid: &TorusGrid) -> Result<VectorField, LabError> {
        synthesize_vector(grid, &self.initial.u)
    }

    pub fn initial_state(&self, grid: &TorusGrid) -> Result<FluidState, LabError> {
        Ok(FluidState::from_velocity(self.initial_density(grid)?, &self.initial_velocity(grid)?)?)
    }

    /// Initial data plus `amplitude` times the configured perturbation.
    pub fn perturbed_state(&self, grid: &TorusGrid, amplitude: f64) -> Result<FluidState, LabError> {
        let drho = synthesize(grid, &self.experiment.perturbation_rho)?;
        let du = synthesize_vector(grid, &self.experiment.perturbation_u)?;
        let rho = self.initial_density(grid)?.zip_map(&drho, |a, b| a + amplitude * b);
        let u = self.initial_velocity(grid)?.zip_map(&du, |a, b| a + amplitude * b);
        Ok(FluidState::from_velocity(rho, &u)?)
    }

    pub fn output_dir(&self, study: Study) -> PathBuf {
        self.experiment
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(study.name()))
    }

    /// Checks everything that can be checked before any integration. Every
    /// failure is reported as a configuration error.
    pub fn validate(&self, study: Study) -> Result<(), LabError> {
        self.validate_inner(study).map_err(|e| match e {
            LabError::Core(e) => LabError::Config(e.to_string()),
            other => other,
        })
    }

    fn validate_inner(&self, study: Study) -> Result<(), LabError> {
        let grid = self.grid()?;
        let energy = self.energy_law()?;
        let cap = self.capillarity_law();
        Material::new(energy, cap, self.capillarity.eps)?;
        self.solver_config().validate()?;
        for (name, modes) in [
            ("initial.rho", &self.initial.rho),
            ("initial.u", &self.initial.u),
            ("experiment.perturbation_rho", &self.experiment.perturbation_rho),
            ("experiment.perturbation_u", &self.experiment.perturbation_u),
        ] {
            for m in modes {
                if m.k.is_empty() || m.k.len() > self.grid.dim {
                    return Err(LabError::Config(format!(
                        "{name}: wave vector {:?} needs 1..={} entries",
                        m.k, self.grid.dim
                    )));
                }
                if m.axis >= self.grid.dim {
                    return Err(LabError::Config(format!("{name}: axis {} out of range", m.axis)));
                }
            }
        }
        let rho0 = self.initial_density(&grid)?;
        if rho0.min() <= self.solver.vacuum_floor {
            return Err(LabError::Config(format!(
                "initial density reaches {} at or below the vacuum floor {}",
                rho0.min(),
                self.solver.vacuum_floor
            )));
        }
        let e = &self.experiment;
        let needs_constant = matches!(study, Study::WeakStrong | Study::Friction | Study::Spinodal)
            || (study == Study::Capillarity && e.setting == Some(Setting::Set1));
        if needs_constant && cap.constant_value().is_none() {
            return Err(LabError::Config(format!("{} needs constant capillarity, got {:?}", study.name(), cap)));
        }
        match study {
            Study::WeakStrong => {
                if energy.bump.is_none() {
                    return Err(LabError::Config(String::from(
                        "weak-strong needs a non-convex energy: set [energy.bump]",
                    )));
                }
                if e.amplitudes.len() < 2 || e.amplitudes.iter().any(|a| !(*a > 0.0)) {
                    return Err(LabError::Config(String::from(
                        "experiment.amplitudes needs at least two positive amplitudes",
                    )));
                }
                if e.perturbation_rho.is_empty() && e.perturbation_u.is_empty() {
                    return Err(LabError::Config(String::from("weak-strong needs a perturbation")));
                }
                self.check_masses(&grid, &energy)?;
            }
            Study::Capillarity => {
                let setting = e
                    .setting
                    .ok_or_else(|| LabError::Config(String::from("capillarity needs experiment.setting = set1 | set2")))?;
                if energy.bump.is_some() {
                    return Err(LabError::Config(String::from(
                        "vanishing-capillarity studies need a convex energy: remove [energy.bump]",
                    )));
                }
                check_eps_list(&e.eps_list)?;
                if setting == Setting::Set2 {
                    self.check_set2(&rho0, &energy)?;
                }
            }
            Study::Friction => check_eps_list(&e.eps_list)?,
            Study::Spinodal => {
                if self.grid.dim != 1 {
                    return Err(LabError::Config(String::from("spinodal runs are one-dimensional")));
                }
                if e.spinodal_modes.is_empty() {
                    return Err(LabError::Config(String::from("experiment.spinodal_modes is empty")));
                }
            }
            Study::MollifyCheck => {
                if e.mollifier_scales.is_empty() || e.snapshots_per_width.len() < 2 {
                    return Err(LabError::Config(String::from(
                        "mollify-check needs mollifier_scales and at least two snapshots_per_width",
                    )));
                }
                if e.snapshots_per_width.iter().any(|&s| s < 8) {
                    return Err(LabError::Config(String::from(
                        "experiment.snapshots_per_width entries must be at least 8",
                    )));
                }
            }
            Study::EnergyBalance => {
                if e.order_dts.len() < 2 {
                    return Err(LabError::Config(String::from("experiment.order_dts needs two steps")));
                }
            }
            Study::Simulate => {}
        }
        if e.setting == Some(Setting::Set2) && study != Study::Capillarity {
            self.check_set2(&rho0, &energy)?;
        }
        Ok(())
    }

    /// Below `gamma = 2` the candidate and reference must carry
    /// the same mass.
    fn check_masses(&self, grid: &TorusGrid, energy: &EnergyLaw) -> Result<(), LabError> {
        if energy.gamma >= 2.0 {
            return Ok(());
        }
        let reference = self.initial_state(grid)?.mass()?;
        for &a in &self.experiment.amplitudes {
            let mass = self.perturbed_state(grid, a)?.mass()?;
            if (mass - reference).abs() > 1e-12 * reference.abs().max(1.0) {
                return Err(LabError::Config(format!(
                    "mass mismatch: gamma = {} < 2 requires equal masses, but amplitude {a} gives {mass} vs reference {reference}",
                    energy.gamma
                )));
            }
        }
        Ok(())
    }

    fn check_set2(&self, rho0: &ScalarField, energy: &EnergyLaw) -> Result<(), LabError> {
        let range = self
            .experiment
            .density_range
            .unwrap_or([0.5 * rho0.min(), 2.0 * rho0.max()]);
        let verdict = set2_check(&self.capillarity_law(), energy, (range[0], range[1]), 2001)?;
        match verdict.failure {
            None => Ok(()),
            Some(Set2Failure::Hessian { rho, margin }) => Err(LabError::Config(format!(
                "Set2 rejected: kappa kappa'' - 2 (kappa')^2 = {margin:e} < 0 at rho = {rho}"
            ))),
            Some(Set2Failure::NonPositiveKappa { rho, kappa }) => Err(LabError::Config(format!(
                "Set2 rejected: kappa = {kappa:e} is not positive at rho = {rho}"
            ))),
            Some(Set2Failure::UnboundedGrowth { clause }) => {
                Err(LabError::Config(format!("Set2 rejected: growth clause `{clause}` is unbounded")))
            }
        }
    }

    /// Short human-readable summary of the physical setup.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "grid: {}D, N = {}, period {}", self.grid.dim, self.grid.points, self.grid.period);
        let _ = writeln!(
            out,
            "energy: c = {}, gamma = {}, bump = {:?}",
            self.energy.c, self.energy.gamma, self.energy.bump
        );
        let _ = writeln!(out, "capillarity: {:?}, eps = {}", self.capillarity_law(), self.capillarity.eps);
        out
    }
}

fn check_eps_list(eps: &[f64]) -> Result<(), LabError> {
    if eps.len() < 4 {
        return Err(LabError::Config(format!(
            "experiment.eps_list needs at least 4 values, got {}",
            eps.len()
        )));
    }
    if eps.iter().any(|e| !(*e > 0.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LabError::Config(format!(
            "experiment.eps_list must be positive and strictly decreasing, got {eps:?}"
        )));
    }
    Ok(())
}

fn mode_value(grid: &TorusGrid, m: &FourierMode, x: &[f64]) -> f64 {
    let phase: f64 = m
        .k
        .iter()
        .enumerate()
        .map(|(a, &k)| std::f64::consts::TAU * k as f64 * x[a] / grid.period(a))
        .sum();
    m.cos * phase.cos() + m.sin * phase.sin()
}

fn synthesize(grid: &TorusGrid, modes: &[FourierMode]) -> Result<ScalarField, LabError> {
    Ok(ScalarField::from_fn(grid, |x| modes.iter().map(|m| mode_value(grid, m, x)).sum()))
}

fn synthesize_vector(grid: &TorusGrid, modes: &[FourierMode]) -> Result<VectorField, LabError> {
    let comps = (0..grid.dim())
        .map(|axis| {
            let own: Vec<FourierMode> = modes.iter().filter(|m| m.axis == axis).cloned().collect();
            synthesize(grid, &own)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VectorField::from_scalars(comps)?)
}
