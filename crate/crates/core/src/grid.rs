//! Flat-torus grids, periodic fields and their Fourier-spectral calculus.
//!
//! Nodes are stored in row-major order with the first axis (`x`) varying
//! slowest. Every derivative operator is a Fourier multiplier; odd-order
//! multipliers vanish on the Nyquist mode so that real fields stay real.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
// Float supplies libm-backed math on toolchains without core float methods.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::fft::Radix2;

/// Minimum number of nodes per axis.
pub const MIN_POINTS: usize = 16;

/// Uniform periodic grid on the `dim`-dimensional flat torus.
///
/// Cloning is cheap: transform plans are shared and immutable.
#[derive(Clone)]
pub struct TorusGrid {
    inner: Arc<GridInner>,
}

struct GridInner {
    dim: usize,
    n: usize,
    period: [f64; 2],
    fft: Radix2,
    /// Angular wavenumber of FFT index `j` on each axis.
    wavenumbers: [Vec<f64>; 2],
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("dim", &self.inner.dim)
            .field("points_per_axis", &self.inner.n)
            .field("period", &&self.inner.period[..self.inner.dim])
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.dim == other.inner.dim
                && self.inner.n == other.inner.n
                && self.inner.period[..self.inner.dim] == other.inner.period[..other.inner.dim])
    }
}

/// Wave vector of one Fourier mode together with its Nyquist flags.
#[derive(Debug, Clone, Copy)]
pub struct Mode {
    pub k: [f64; 2],
    pub nyquist: [bool; 2],
    /// Signed integer index per axis, in `-n/2 ..= n/2`.
    pub index: [i64; 2],
}

impl Mode {
    /// `|k|^2` over the active axes.
    pub fn k_sq(&self, dim: usize) -> f64 {
        self.k[..dim].iter().map(|k| k * k).sum()
    }

    /// Derivative symbol `i k_axis`, zero on the Nyquist mode of that axis.
    pub fn ik(&self, axis: usize) -> Complex64 {
        if self.nyquist[axis] {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, self.k[axis])
        }
    }
}

impl TorusGrid {
    pub fn new(dim: usize, points_per_axis: usize, period: &[f64]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if points_per_axis < MIN_POINTS || !points_per_axis.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis {points_per_axis} must be a power of two >= {MIN_POINTS}"
            )));
        }
        if period.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} periods given for a {dim}-dimensional grid",
                period.len()
            )));
        }
        let mut p = [1.0; 2];
        for (axis, &l) in period.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!("period {l} on axis {axis} must be positive")));
            }
            p[axis] = l;
        }
        let n = points_per_axis;
        let wavenumbers = [axis_wavenumbers(n, p[0]), axis_wavenumbers(n, p[1])];
        Ok(Self {
            inner: Arc::new(GridInner {
                dim,
                n,
                period: p,
                fft: Radix2::new(n),
                wavenumbers,
            }),
        })
    }

    /// Grid on the unit torus `[0,1)^dim`.
    pub fn unit(dim: usize, points_per_axis: usize) -> Result<Self> {
        Self::new(dim, points_per_axis, &[1.0, 1.0][..dim.min(2)])
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.inner.n
    }

    pub fn period(&self, axis: usize) -> f64 {
        self.inner.period[axis]
    }

    pub fn periods(&self) -> &[f64] {
        &self.inner.period[..self.inner.dim]
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.inner.n.pow(self.inner.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.inner.period[axis] / self.inner.n as f64
    }

    /// Smallest grid spacing over the active axes.
    pub fn min_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn volume(&self) -> f64 {
        self.periods().iter().product()
    }

    /// Integer node indices of a flat index.
    pub fn node_indices(&self, index: usize) -> [usize; 2] {
        let n = self.inner.n;
        match self.inner.dim {
            1 => [index, 0],
            _ => [index / n, index % n],
        }
    }

    /// Physical coordinates of a flat node index.
    pub fn coordinates(&self, index: usize) -> [f64; 2] {
        let [i, j] = self.node_indices(index);
        [i as f64 * self.spacing(0), j as f64 * self.spacing(1)]
    }

    /// Largest angular wavenumber on an axis (the Nyquist wavenumber).
    pub fn nyquist_wavenumber(&self, axis: usize) -> f64 {
        PI * self.inner.n as f64 / self.inner.period[axis]
    }

    pub fn mode(&self, flat: usize) -> Mode {
        let n = self.inner.n;
        let [j0, j1] = self.node_indices(flat);
        let idx = |j: usize| if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
        let mut mode = Mode {
            k: [self.inner.wavenumbers[0][j0], 0.0],
            nyquist: [j0 == n / 2, false],
            index: [idx(j0), 0],
        };
        if self.inner.dim == 2 {
            mode.k[1] = self.inner.wavenumbers[1][j1];
            mode.nyquist[1] = j1 == n / 2;
            mode.index[1] = idx(j1);
        }
        mode
    }

    /// Forward transform of nodal values (unnormalized).
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.len());
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Inverse transform back to real nodal values; the imaginary residue is
    /// discarded (it is roundoff for Hermitian-symmetric spectra).
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spectrum, true);
        #[cfg(debug_assertions)]
        {
            let scale = spectrum.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
            let residue = spectrum.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
            debug_assert!(residue <= 1e-12 * scale, "imaginary residue {residue:e} (scale {scale:e})");
        }
        spectrum.into_iter().map(|z| z.re).collect()
    }

    /// Multiplies the spectrum by `symbol(mode)` and transforms back.
    pub fn apply_symbol(&self, spectrum: &[Complex64], symbol: impl Fn(&Mode) -> Complex64) -> Vec<f64> {
        let out = spectrum
            .iter()
            .enumerate()
            .map(|(i, &z)| z * symbol(&self.mode(i)))
            .collect();
        self.inverse_real(out)
    }

    /// Visits every Fourier mode of the grid's spectrum layout.
    pub fn modes(&self) -> impl Iterator<Item = Mode> + '_ {
        (0..self.len()).map(move |i| self.mode(i))
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let fft = &self.inner.fft;
        let n = fft.len();
        let run = |line: &mut [Complex64]| {
            if inverse {
                fft.inverse(line)
            } else {
                fft.forward(line)
            }
        };
        match self.inner.dim {
            1 => run(buf),
            _ => {
                for row in buf.chunks_exact_mut(n) {
                    run(row);
                }
                let mut column = vec![Complex64::new(0.0, 0.0); n];
                for j in 0..n {
                    for i in 0..n {
                        column[i] = buf[i * n + j];
                    }
                    run(&mut column);
                    for i in 0..n {
                        buf[i * n + j] = column[i];
                    }
                }
            }
        }
    }

    /// Sum of `values` times the cell volume.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        check_finite(values)?;
        Ok(values.iter().sum::<f64>() * self.cell_volume())
    }
}

/// Symbol of `div(grad)`, `-sum k_j^2` over axes not at Nyquist.
pub fn div_grad_symbol(m: &Mode, dim: usize) -> f64 {
    (0..dim).filter(|&a| !m.nyquist[a]).map(|a| -m.k[a] * m.k[a]).sum()
}

fn axis_wavenumbers(n: usize, period: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let signed = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            2.0 * PI * signed / period
        })
        .collect()
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(node) => Err(Error::NonFinite { node, value: values[node] }),
        None => Ok(()),
    }
}

fn check_same(a: &TorusGrid, b: &TorusGrid, what: &'static str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch(what))
    }
}

/// Real scalar field, one value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    /// Validated constructor: length must match the grid and values be finite.
    pub fn new(grid: &TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Length {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self::from_raw(grid, values))
    }

    pub(crate) fn from_raw(grid: &TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn constant(grid: &TorusGrid, value: f64) -> Self {
        Self::from_raw(grid, vec![value; grid.len()])
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at every node; `f` receives the coordinate slice of length `dim`.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let dim = grid.dim();
        let values = (0..grid.len()).map(|i| f(&grid.coordinates(i)[..dim])).collect();
        Self::from_raw(grid, values)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Nodewise combination; the grids must agree.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.grid == other.grid);
        Self::from_raw(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index and value of the smallest node value.
    pub fn argmin(&self) -> (usize, f64) {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.values)
    }

    pub fn integrate(&self) -> Result<f64> {
        self.grid.integrate(&self.values)
    }

    /// Discrete L2 norm, `sqrt(integral of f^2)`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        self.grid.forward(&self.values)
    }

    /// Applies a Fourier multiplier to the field.
    pub fn apply_symbol(&self, symbol: impl Fn(&Mode) -> Complex64) -> Result<Self> {
        self.check_finite()?;
        let out = self.grid.apply_symbol(&self.spectrum(), symbol);
        Ok(Self::from_raw(&self.grid, out))
    }

    pub fn gradient(&self) -> Result<VectorField> {
        self.check_finite()?;
        let spec = self.spectrum();
        let components = (0..self.grid.dim())
            .map(|axis| self.grid.apply_symbol(&spec, |m| m.ik(axis)))
            .collect();
        Ok(VectorField::from_raw(&self.grid, components))
    }

    /// Partial derivative along one axis.
    pub fn derivative(&self, axis: usize) -> Result<Self> {
        self.apply_symbol(|m| m.ik(axis))
    }

    /// Spectral Laplacian `-|k|^2` (the Nyquist mode is kept).
    pub fn laplacian(&self) -> Result<Self> {
        let dim = self.grid.dim();
        self.apply_symbol(|m| Complex64::new(-m.k_sq(dim), 0.0))
    }

    /// `div(grad f)` as a single multiplier: like [`Self::laplacian`] but with
    /// the Nyquist mode removed, so it is the exact composition of the
    /// discrete operators.
    pub fn div_grad(&self) -> Result<Self> {
        let dim = self.grid.dim();
        self.apply_symbol(|m| Complex64::new(div_grad_symbol(m, dim), 0.0))
    }

    /// Bilaplacian `|k|^4`.
    pub fn bilaplacian(&self) -> Result<Self> {
        let dim = self.grid.dim();
        self.apply_symbol(|m| Complex64::new(m.k_sq(dim) * m.k_sq(dim), 0.0))
    }

    /// Two-thirds-rule filter: zeroes every mode with `|j| > n/3` on some axis.
    pub fn dealiased(&self) -> Result<Self> {
        let cutoff = (self.grid.points_per_axis() / 3) as i64;
        self.apply_symbol(|m| {
            if m.index.iter().any(|j| j.abs() > cutoff) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
    }

    /// Cyclic shift by whole nodes: `out[i] = self[i - offset]`.
    pub fn shifted(&self, offset: &[isize]) -> Self {
        Self::from_raw(&self.grid, shift_values(&self.grid, &self.values, offset))
    }

    /// Spectral resampling onto another grid with the same dimension and
    /// periods. Coarsening truncates modes (the shared Nyquist mode is
    /// dropped), refinement zero-pads.
    pub fn resample(&self, target: &TorusGrid) -> Result<Self> {
        if target.dim() != self.grid.dim() || target.periods() != self.grid.periods() {
            return Err(Error::GridMismatch("resample"));
        }
        self.check_finite()?;
        let (ns, nt) = (self.grid.points_per_axis(), target.points_per_axis());
        if ns == nt {
            return Ok(Self::from_raw(target, self.values.clone()));
        }
        let spec = self.spectrum();
        let keep = (ns.min(nt) / 2) as i64;
        let dim = self.grid.dim();
        let scale = (nt as f64 / ns as f64).powi(dim as i32);
        let mut out = vec![Complex64::new(0.0, 0.0); target.len()];
        let wrap = |j: i64, n: usize| if j < 0 { (j + n as i64) as usize } else { j as usize };
        for (i, z) in spec.iter().enumerate() {
            let mode = self.grid.mode(i);
            if mode.index[..dim].iter().any(|j| j.abs() >= keep) {
                continue;
            }
            let t = match dim {
                1 => wrap(mode.index[0], nt),
                _ => wrap(mode.index[0], nt) * nt + wrap(mode.index[1], nt),
            };
            out[t] = z * scale;
        }
        Ok(Self::from_raw(target, target.inverse_real(out)))
    }
}

fn shift_values(grid: &TorusGrid, values: &[f64], offset: &[isize]) -> Vec<f64> {
    let n = grid.points_per_axis() as isize;
    let wrap = |i: isize| i.rem_euclid(n) as usize;
    let mut out = vec![0.0; values.len()];
    match grid.dim() {
        1 => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = values[wrap(i as isize - offset[0])];
            }
        }
        _ => {
            for (flat, o) in out.iter_mut().enumerate() {
                let [i, j] = grid.node_indices(flat);
                let src = wrap(i as isize - offset[0]) * n as usize + wrap(j as isize - offset[1]);
                *o = values[src];
            }
        }
    }
    out
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: Self) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: Self) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: Self) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Mul<f64> for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: f64) -> ScalarField {
        self.map(|a| a * rhs)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|a| -a)
    }
}

/// Vector field with `dim` components.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: &TorusGrid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim() {
            return Err(Error::Length {
                expected: grid.dim(),
                actual: components.len(),
            });
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(Error::Length {
                    expected: grid.len(),
                    actual: c.len(),
                });
            }
            check_finite(c)?;
        }
        Ok(Self::from_raw(grid, components))
    }

    pub(crate) fn from_raw(grid: &TorusGrid, components: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(components.len(), grid.dim());
        Self {
            grid: grid.clone(),
            components,
        }
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self::from_raw(grid, vec![vec![0.0; grid.len()]; grid.dim()])
    }

    /// Builds from scalar components.
    pub fn from_scalars(components: Vec<ScalarField>) -> Result<Self> {
        let grid = components
            .first()
            .map(|c| c.grid.clone())
            .ok_or(Error::GridMismatch("empty vector field"))?;
        for c in &components {
            check_same(&grid, &c.grid, "vector components")?;
        }
        Self::new(&grid, components.into_iter().map(|c| c.values).collect())
    }

    /// Samples `f` at every node; `f` returns the components (first `dim` used).
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> [f64; 2]) -> Self {
        let dim = grid.dim();
        let mut components = vec![Vec::with_capacity(grid.len()); dim];
        for i in 0..grid.len() {
            let v = f(&grid.coordinates(i)[..dim]);
            for (a, c) in components.iter_mut().enumerate() {
                c.push(v[a]);
            }
        }
        Self::from_raw(grid, components)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn component_field(&self, axis: usize) -> ScalarField {
        ScalarField::from_raw(&self.grid, self.components[axis].clone())
    }

    pub fn check_finite(&self) -> Result<()> {
        self.components.iter().try_for_each(|c| check_finite(c))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(
            &self.grid,
            self.components.iter().map(|c| c.iter().map(|&v| f(v)).collect()).collect(),
        )
    }

    /// Componentwise combination with another vector field.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.grid == other.grid);
        Self::from_raw(
            &self.grid,
            self.components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        )
    }

    /// Every component combined nodewise with a scalar field.
    pub fn zip_scalar(&self, s: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.grid == s.grid);
        Self::from_raw(
            &self.grid,
            self.components
                .iter()
                .map(|c| c.iter().zip(&s.values).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        )
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// Nodewise dot product.
    pub fn dot(&self, other: &Self) -> ScalarField {
        debug_assert!(self.grid == other.grid);
        let mut out = vec![0.0; self.grid.len()];
        for (a, b) in self.components.iter().zip(&other.components) {
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o += x * y;
            }
        }
        ScalarField::from_raw(&self.grid, out)
    }

    pub fn norm_sq(&self) -> ScalarField {
        self.dot(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Componentwise integrals.
    pub fn integrate(&self) -> Result<[f64; 2]> {
        let mut out = [0.0; 2];
        for (a, c) in self.components.iter().enumerate() {
            out[a] = self.grid.integrate(c)?;
        }
        Ok(out)
    }

    pub fn divergence(&self) -> Result<ScalarField> {
        self.check_finite()?;
        let mut out = vec![0.0; self.grid.len()];
        for (axis, c) in self.components.iter().enumerate() {
            let d = self.grid.apply_symbol(&self.grid.forward(c), |m| m.ik(axis));
            for (o, v) in out.iter_mut().zip(d) {
                *o += v;
            }
        }
        Ok(ScalarField::from_raw(&self.grid, out))
    }

    /// Jacobian `J[i][j] = d_j v_i` as a tensor field.
    pub fn jacobian(&self) -> Result<TensorField> {
        self.check_finite()?;
        let dim = self.dim();
        let mut comps = Vec::with_capacity(dim * dim);
        for c in &self.components {
            let spec = self.grid.forward(c);
            for axis in 0..dim {
                comps.push(self.grid.apply_symbol(&spec, |m| m.ik(axis)));
            }
        }
        Ok(TensorField::from_raw(&self.grid, comps, false))
    }

    pub fn shifted(&self, offset: &[isize]) -> Self {
        Self::from_raw(
            &self.grid,
            self.components
                .iter()
                .map(|c| shift_values(&self.grid, c, offset))
                .collect(),
        )
    }

    pub fn resample(&self, target: &TorusGrid) -> Result<Self> {
        let comps = (0..self.dim())
            .map(|a| self.component_field(a).resample(target).map(|f| f.values))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_raw(target, comps))
    }

    pub fn apply_symbol(&self, symbol: impl Fn(&Mode) -> Complex64) -> Result<Self> {
        self.check_finite()?;
        let comps = self
            .components
            .iter()
            .map(|c| self.grid.apply_symbol(&self.grid.forward(c), &symbol))
            .collect();
        Ok(Self::from_raw(&self.grid, comps))
    }
}

impl Add for &VectorField {
    type Output = VectorField;
    fn add(self, rhs: Self) -> VectorField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &VectorField {
    type Output = VectorField;
    fn sub(self, rhs: Self) -> VectorField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

/// Second-order tensor field, components stored row-major (`T[i][j]` at `i*dim + j`).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: TorusGrid,
    components: Vec<Vec<f64>>,
    symmetric: bool,
}

/// Absolute tolerance of the symmetry check for tensors flagged symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

impl TensorField {
    pub fn new(grid: &TorusGrid, components: Vec<Vec<f64>>, symmetric: bool) -> Result<Self> {
        let dim = grid.dim();
        if components.len() != dim * dim {
            return Err(Error::Length {
                expected: dim * dim,
                actual: components.len(),
            });
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(Error::Length {
                    expected: grid.len(),
                    actual: c.len(),
                });
            }
            check_finite(c)?;
        }
        let t = Self::from_raw(grid, components, symmetric);
        if symmetric {
            let asym = t.asymmetry();
            if asym > SYMMETRY_TOL {
                return Err(Error::InvalidParameter(format!(
                    "tensor flagged symmetric has asymmetry {asym:e}"
                )));
            }
        }
        Ok(t)
    }

    pub(crate) fn from_raw(grid: &TorusGrid, components: Vec<Vec<f64>>, symmetric: bool) -> Self {
        Self {
            grid: grid.clone(),
            components,
            symmetric,
        }
    }

    /// `s I` for a scalar field `s`.
    pub fn isotropic(s: &ScalarField) -> Self {
        let dim = s.grid.dim();
        let zeros = vec![0.0; s.grid.len()];
        let comps = (0..dim * dim)
            .map(|k| if k / dim == k % dim { s.values.clone() } else { zeros.clone() })
            .collect();
        Self::from_raw(&s.grid, comps, true)
    }

    /// Nodewise outer product `a (x) b`.
    pub fn outer(a: &VectorField, b: &VectorField) -> Self {
        let dim = a.dim();
        let mut comps = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                comps.push(a.components[i].iter().zip(&b.components[j]).map(|(x, y)| x * y).collect());
            }
        }
        Self::from_raw(&a.grid, comps, a == b)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn component(&self, i: usize, j: usize) -> &[f64] {
        &self.components[i * self.dim() + j]
    }

    /// Largest `|T_ij - T_ji|` over nodes and index pairs.
    pub fn asymmetry(&self) -> f64 {
        let dim = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..dim {
            for j in (i + 1)..dim {
                for (a, b) in self.component(i, j).iter().zip(self.component(j, i)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_raw(
            &self.grid,
            self.components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
            self.symmetric && other.symmetric,
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(
            &self.grid,
            self.components.iter().map(|c| c.iter().map(|&v| f(v)).collect()).collect(),
            self.symmetric,
        )
    }

    /// Every component multiplied nodewise by a scalar field.
    pub fn scale_by(&self, s: &ScalarField) -> Self {
        Self::from_raw(
            &self.grid,
            self.components
                .iter()
                .map(|c| c.iter().zip(&s.values).map(|(x, y)| x * y).collect())
                .collect(),
            self.symmetric,
        )
    }

    /// Nodewise double contraction `A : B = sum_ij A_ij B_ij`.
    pub fn contract(&self, other: &Self) -> ScalarField {
        let mut out = vec![0.0; self.grid.len()];
        for (a, b) in self.components.iter().zip(&other.components) {
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o += x * y;
            }
        }
        ScalarField::from_raw(&self.grid, out)
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Row divergence, `(div T)_i = sum_j d_j T_ij`.
    pub fn divergence(&self) -> Result<VectorField> {
        self.components.iter().try_for_each(|c| check_finite(c))?;
        let dim = self.dim();
        let mut out = vec![vec![0.0; self.grid.len()]; dim];
        for (i, row) in out.iter_mut().enumerate() {
            for j in 0..dim {
                let d = self
                    .grid
                    .apply_symbol(&self.grid.forward(self.component(i, j)), |m| m.ik(j));
                for (o, v) in row.iter_mut().zip(d) {
                    *o += v;
                }
            }
        }
        Ok(VectorField::from_raw(&self.grid, out))
    }
}

impl Add for &TensorField {
    type Output = TensorField;
    fn add(self, rhs: Self) -> TensorField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &TensorField {
    type Output = TensorField;
    fn sub(self, rhs: Self) -> TensorField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

/// Free-function form of [`ScalarField::gradient`].
pub fn gradient(f: &ScalarField) -> Result<VectorField> {
    f.gradient()
}

/// Free-function form of [`VectorField::divergence`].
pub fn divergence(v: &VectorField) -> Result<ScalarField> {
    v.divergence()
}

/// Free-function form of [`ScalarField::laplacian`].
pub fn laplacian(f: &ScalarField) -> Result<ScalarField> {
    f.laplacian()
}

/// Free-function form of [`TensorField::divergence`].
pub fn div_tensor(t: &TensorField) -> Result<VectorField> {
    t.divergence()
}

/// Free-function form of [`ScalarField::integrate`].
pub fn integrate(f: &ScalarField) -> Result<f64> {
    f.integrate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::TAU;

    fn grid1(n: usize) -> TorusGrid {
        TorusGrid::unit(1, n).unwrap()
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TorusGrid::unit(3, 32).is_err());
        assert!(TorusGrid::unit(1, 8).is_err());
        assert!(TorusGrid::unit(1, 48).is_err());
        assert!(TorusGrid::new(1, 32, &[0.0]).is_err());
        assert!(TorusGrid::new(2, 32, &[1.0]).is_err());
        let g = TorusGrid::new(2, 16, &[2.0, 0.5]).unwrap();
        assert_eq!(g.len(), 256);
        assert!((g.cell_volume() - (2.0 / 16.0) * (0.5 / 16.0)).abs() < 1e-15);
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = grid1(32);
        let f = ScalarField::constant(&g, 3.5);
        assert!(f.gradient().unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn gradient_of_sine_is_exact() {
        let g = grid1(64);
        let f = ScalarField::from_fn(&g, |x| (TAU * x[0]).sin());
        let df = f.gradient().unwrap();
        let expected = ScalarField::from_fn(&g, |x| TAU * (TAU * x[0]).cos());
        assert!(max_diff(df.component(0), expected.values()) <= 1e-12);
    }

    #[test]
    fn gradient_rejects_non_finite() {
        let g = grid1(16);
        let mut v = vec![0.0; 16];
        v[5] = f64::NAN;
        let f = ScalarField::from_raw(&g, v);
        match f.gradient() {
            Err(Error::NonFinite { node, .. }) => assert_eq!(node, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(ScalarField::new(&g, vec![f64::INFINITY; 16]).is_err());
    }

    #[test]
    fn divergence_of_gradient_of_sine() {
        let g = grid1(64);
        let v = ScalarField::from_fn(&g, |x| (TAU * x[0]).sin()).gradient().unwrap();
        let div = v.divergence().unwrap();
        let expected = ScalarField::from_fn(&g, |x| -TAU * TAU * (TAU * x[0]).sin());
        assert!(max_diff(div.values(), expected.values()) <= 1e-10);
    }

    #[test]
    fn constant_tensor_has_zero_divergence() {
        let g = TorusGrid::unit(2, 16).unwrap();
        let t = TensorField::isotropic(&ScalarField::constant(&g, 2.0));
        assert!(t.divergence().unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn grid_mismatch_is_structural_error() {
        let a = ScalarField::zeros(&grid1(16));
        let b = ScalarField::zeros(&grid1(32));
        assert!(matches!(
            VectorField::from_scalars(alloc::vec![a, b]),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn quadrature_examples() {
        let g = grid1(64);
        assert!((ScalarField::constant(&g, 3.0).integrate().unwrap() - 3.0).abs() < 1e-14);
        let s = ScalarField::from_fn(&g, |x| (TAU * x[0]).sin());
        assert!(s.integrate().unwrap().abs() <= 1e-14);
        let s2 = s.map(|v| v * v);
        assert!((s2.integrate().unwrap() - 0.5).abs() <= 1e-13);
    }

    #[test]
    fn symmetric_flag_is_checked() {
        let g = TorusGrid::unit(2, 16).unwrap();
        let comps = alloc::vec![
            alloc::vec![0.0; 256],
            alloc::vec![1.0; 256],
            alloc::vec![0.0; 256],
            alloc::vec![0.0; 256],
        ];
        assert!(TensorField::new(&g, comps.clone(), true).is_err());
        assert!(TensorField::new(&g, comps, false).is_ok());
    }

    #[test]
    fn resample_round_trip_band_limited() {
        let coarse = grid1(32);
        let fine = grid1(128);
        let f = ScalarField::from_fn(&coarse, |x| 1.0 + 0.3 * (TAU * 3.0 * x[0]).cos() + 0.1 * (TAU * 5.0 * x[0]).sin());
        let up = f.resample(&fine).unwrap();
        let expected = ScalarField::from_fn(&fine, |x| 1.0 + 0.3 * (TAU * 3.0 * x[0]).cos() + 0.1 * (TAU * 5.0 * x[0]).sin());
        assert!(max_diff(up.values(), expected.values()) < 1e-13);
        let down = up.resample(&coarse).unwrap();
        assert!(max_diff(down.values(), f.values()) < 1e-13);
    }

    #[test]
    fn dealias_removes_high_modes() {
        let g = grid1(48 / 3 * 2); // 32
        let f = ScalarField::from_fn(&g, |x| (TAU * 3.0 * x[0]).sin() + (TAU * 14.0 * x[0]).cos());
        let d = f.dealiased().unwrap();
        let expected = ScalarField::from_fn(&g, |x| (TAU * 3.0 * x[0]).sin());
        assert!(max_diff(d.values(), expected.values()) < 1e-13);
    }
}
