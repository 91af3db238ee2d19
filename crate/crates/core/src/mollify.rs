//! Space-time mollification of a density/momentum trajectory with a one-sided
//! smooth kernel, after extending the trajectory to negative times.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::constitutive::{check_vacuum, FluidState, DEFAULT_VACUUM_FLOOR};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid, VectorField};

/// Interior nodes of the trapezoid rule used for the kernel's integral and
/// Fourier transform. The kernel is flat to all orders at both ends, so the
/// rule converges faster than any power.
const KERNEL_NODES: usize = 2048;

/// Minimum number of snapshots per kernel width `1/n`.
pub const SNAPSHOTS_PER_WIDTH: f64 = 8.0;

/// Unnormalized bump `exp(-1/(s(1-s)))` on `(0, 1)`.
fn raw_kernel(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        (-1.0 / (s * (1.0 - s))).exp()
    }
}

/// Mollifier `phi^n(x) = n phi(n x)` with `phi` a unit-mass bump on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifierSpec {
    n: usize,
    vacuum_floor: f64,
    normalization: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl MollifierSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(String::from("mollifier scale n must be positive")));
        }
        let h = 1.0 / (KERNEL_NODES + 1) as f64;
        let nodes: Vec<f64> = (1..=KERNEL_NODES).map(|q| q as f64 * h).collect();
        let raw: Vec<f64> = nodes.iter().map(|&s| raw_kernel(s)).collect();
        let mass: f64 = raw.iter().sum::<f64>() * h;
        let weights = raw.iter().map(|r| r * h / mass).collect();
        Ok(Self {
            n,
            vacuum_floor: DEFAULT_VACUUM_FLOOR,
            normalization: 1.0 / mass,
            nodes,
            weights,
        })
    }

    pub fn with_vacuum_floor(mut self, floor: f64) -> Self {
        self.vacuum_floor = floor;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Kernel width `1/n`.
    pub fn width(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Unit-mass kernel `phi`.
    pub fn kernel(&self, s: f64) -> f64 {
        raw_kernel(s) * self.normalization
    }

    /// `phi^n(x) = n phi(n x)`.
    pub fn scaled_kernel(&self, x: f64) -> f64 {
        let n = self.n as f64;
        n * self.kernel(n * x)
    }

    /// `int phi^n(x) exp(-i omega x) dx`.
    pub fn transform(&self, omega: f64) -> Complex64 {
        let w = omega / self.n as f64;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &q)| Complex64::from_polar(q, -w * s))
            .sum()
    }

    /// Spectral multiplier of the periodic convolution with the product kernel.
    /// On a Nyquist axis only the real part is kept so real fields stay real.
    fn multiplier(&self, grid: &TorusGrid) -> Vec<Complex64> {
        let n = grid.points_per_axis();
        let per_axis: Vec<Vec<Complex64>> = (0..grid.dim())
            .map(|axis| {
                (0..n)
                    .map(|j| {
                        let signed = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                        let z = self.transform(core::f64::consts::TAU * signed / grid.period(axis));
                        if j == n / 2 {
                            Complex64::new(z.re, 0.0)
                        } else {
                            z
                        }
                    })
                    .collect()
            })
            .collect();
        (0..grid.len())
            .map(|i| {
                let m = grid.mode(i);
                (0..grid.dim())
                    .map(|a| per_axis[a][m.index[a].rem_euclid(n as i64) as usize])
                    .product()
            })
            .collect()
    }

    /// Spatial mollification `phi^n * f` of a scalar field.
    pub fn mollify_space(&self, f: &ScalarField) -> Result<ScalarField> {
        let mult = self.multiplier(f.grid());
        apply(&mult, f)
    }

    /// Spatial mollification of every component of a vector field.
    pub fn mollify_space_vector(&self, v: &VectorField) -> Result<VectorField> {
        let mult = self.multiplier(v.grid());
        let comps = (0..v.dim())
            .map(|i| apply(&mult, &v.component_field(i)))
            .collect::<Result<Vec<_>>>()?;
        VectorField::from_scalars(comps)
    }
}

fn apply(mult: &[Complex64], f: &ScalarField) -> Result<ScalarField> {
    f.check_finite()?;
    let grid = f.grid();
    let spectrum = grid.forward(f.values());
    let out = spectrum.iter().zip(mult).map(|(z, m)| z * m).collect();
    ScalarField::new(grid, grid.inverse_real(out))
}

/// A trajectory that may carry a prepended rest segment `rho = rho_0`,
/// `m = 0` at negative times. `origin` indexes the snapshot at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<FluidState>,
    pub origin: usize,
    extended: bool,
}

impl ExtendedTrajectory {
    /// Wraps a trajectory without any extension.
    pub fn from_trajectory(traj: &Trajectory<FluidState>) -> Self {
        Self {
            times: traj.times.clone(),
            states: traj.states.clone(),
            origin: 0,
            extended: false,
        }
    }

    /// The part at `t >= 0`.
    pub fn restrict(&self) -> (&[f64], &[FluidState]) {
        (&self.times[self.origin..], &self.states[self.origin..])
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }

    /// Time span stored before the origin snapshot.
    pub fn history(&self) -> f64 {
        self.times[self.origin] - self.times[0]
    }
}

/// Prepends `rho(t) = rho_0`, `m(t) = 0` for `t < 0` at the trajectory's first
/// snapshot spacing, covering at least the kernel width `1/n`.
pub fn extend_negative_time(traj: &Trajectory<FluidState>, spec: &MollifierSpec) -> Result<ExtendedTrajectory> {
    if traj.len() < 2 {
        return Err(Error::Coverage(format!("extension needs 2 snapshots, got {}", traj.len())));
    }
    if traj.times[0].abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "extension needs a trajectory starting at t = 0, got t = {}",
            traj.times[0]
        )));
    }
    let spacing = traj.times[1] - traj.times[0];
    let count = (spec.width() / spacing - 1e-9).ceil() as usize + 1;
    let first = &traj.states[0];
    let rest = FluidState::at_rest(first.rho.clone())?;
    let mut times: Vec<f64> = (1..=count).rev().map(|k| -(k as f64) * spacing).collect();
    let mut states: Vec<FluidState> = (0..count).map(|_| rest.clone()).collect();
    times.extend_from_slice(&traj.times);
    states.extend(traj.states.iter().cloned());
    Ok(ExtendedTrajectory {
        times,
        states,
        origin: count,
        extended: true,
    })
}

/// Mollified density, momentum and kinetic density `(|m|^2/rho)^n` at the
/// snapshot times `t >= 0` of the source.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifiedPair {
    pub times: Vec<f64>,
    pub rho: Vec<ScalarField>,
    pub m: Vec<VectorField>,
    pub kinetic: Vec<ScalarField>,
}

/// Trapezoid weights of `phi^n(t - s)` over the snapshots `s = times[j]`,
/// normalized to unit sum. At the origin of an extended trajectory the
/// one-sided values of jump quantities are averaged, which halves their weight.
fn time_weights(spec: &MollifierSpec, times: &[f64], i: usize) -> Vec<(usize, f64)> {
    let t = times[i];
    let mut out = Vec::new();
    let mut total = 0.0;
    for j in (0..=i).rev() {
        let tau = t - times[j];
        if tau > spec.width() {
            break;
        }
        let left = if j > 0 { times[j] - times[j - 1] } else { 0.0 };
        let right = if j < i { times[j + 1] - times[j] } else { 0.0 };
        let w = spec.scaled_kernel(tau) * 0.5 * (left + right);
        if w > 0.0 {
            out.push((j, w));
            total += w;
        }
    }
    for (_, w) in &mut out {
        *w /= total;
    }
    out
}

fn combine_scalars(fields: impl Iterator<Item = (f64, ScalarField)>, grid: &TorusGrid) -> Result<ScalarField> {
    let mut acc = alloc::vec![0.0; grid.len()];
    for (w, f) in fields {
        for (a, v) in acc.iter_mut().zip(f.values()) {
            *a += w * v;
        }
    }
    ScalarField::new(grid, acc)
}

/// Space-time mollification of an extended trajectory.
pub fn mollify_pair(ext: &ExtendedTrajectory, spec: &MollifierSpec) -> Result<MollifiedPair> {
    let times = &ext.times;
    if times.len() < 2 {
        return Err(Error::Coverage(format!("mollification needs 2 snapshots, got {}", times.len())));
    }
    let needed = spec.width();
    if ext.history() < needed * (1.0 - 1e-9) {
        return Err(Error::Coverage(format!(
            "mollification at t = {} needs history back to t - {needed}, only {} available; extend to negative times by at least {needed}",
            times[ext.origin],
            ext.history()
        )));
    }
    let max_spacing = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if max_spacing > needed / SNAPSHOTS_PER_WIDTH * (1.0 + 1e-9) {
        return Err(Error::Coverage(format!(
            "snapshot spacing {max_spacing} exceeds 1/({}n) = {}",
            SNAPSHOTS_PER_WIDTH,
            needed / SNAPSHOTS_PER_WIDTH
        )));
    }
    let grid = ext.states[0].grid().clone();
    let mult = spec.multiplier(&grid);
    let kinetic: Vec<ScalarField> = ext
        .states
        .iter()
        .zip(times)
        .map(|(s, &t)| {
            check_vacuum(&s.rho, spec.vacuum_floor, t)?;
            Ok(s.m.norm_sq().zip_map(&s.rho, |m2, r| m2 / r))
        })
        .collect::<Result<_>>()?;

    let mut out = MollifiedPair {
        times: Vec::new(),
        rho: Vec::new(),
        m: Vec::new(),
        kinetic: Vec::new(),
    };
    for i in ext.origin..times.len() {
        let weights = time_weights(spec, times, i);
        let jump = |j: usize| if ext.extended && j == ext.origin { 0.5 } else { 1.0 };
        let rho = combine_scalars(weights.iter().map(|&(j, w)| (w, ext.states[j].rho.clone())), &grid)?;
        let k = combine_scalars(weights.iter().map(|&(j, w)| (w * jump(j), kinetic[j].clone())), &grid)?;
        let m = (0..grid.dim())
            .map(|a| {
                let f = combine_scalars(
                    weights.iter().map(|&(j, w)| (w * jump(j), ext.states[j].m.component_field(a))),
                    &grid,
                )?;
                apply(&mult, &f)
            })
            .collect::<Result<Vec<_>>>()?;
        out.times.push(times[i]);
        out.rho.push(apply(&mult, &rho)?);
        out.m.push(VectorField::from_scalars(m)?);
        out.kinetic.push(apply(&mult, &k)?);
    }
    Ok(out)
}

impl MollifiedPair {
    /// `max (|m^n|^2/rho^n - (|m|^2/rho)^n)` over all nodes and times; Jensen's
    /// inequality says this is at most zero.
    pub fn jensen_excess(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for ((rho, m), k) in self.rho.iter().zip(&self.m).zip(&self.kinetic) {
            let m2 = m.norm_sq();
            for n in 0..rho.len() {
                worst = worst.max(m2.values()[n] / rho.values()[n] - k.values()[n]);
            }
        }
        worst
    }

    /// `max_t ||rho^n(t) - rho(t)||_{L^2}` against the unmollified snapshots.
    pub fn l2_distance(&self, ext: &ExtendedTrajectory) -> f64 {
        let (_, states) = ext.restrict();
        self.rho
            .iter()
            .zip(states)
            .map(|(a, s)| a.zip_map(&s.rho, |x, y| x - y).l2_norm())
            .fold(0.0, f64::max)
    }
}

/// `max` over interior times of `||d_t rho^n + div m^n||_inf`, with `d_t`
/// the three-point second-order difference on the (possibly nonuniform) time grid.
pub fn continuity_residual(pair: &MollifiedPair) -> Result<f64> {
    let len = pair.times.len();
    if len < 3 {
        return Err(Error::Coverage(format!("continuity residual needs 3 snapshots, got {len}")));
    }
    let mut worst: f64 = 0.0;
    for i in 1..len - 1 {
        let h1 = pair.times[i] - pair.times[i - 1];
        let h2 = pair.times[i + 1] - pair.times[i];
        let (a, b, c) = (-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2)));
        let div = pair.m[i].divergence()?;
        for n in 0..div.len() {
            let dt = a * pair.rho[i - 1].values()[n] + b * pair.rho[i].values()[n] + c * pair.rho[i + 1].values()[n];
            worst = worst.max((dt + div.values()[n]).abs());
        }
    }
    Ok(worst)
}
