//! Least-squares power-law fits `error ~ C eps^slope` in log-log space.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Change of the local log-log slope across the fitted range above which the
/// data is flagged as bent (typically a discretization floor).
pub const CURVATURE_TOLERANCE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub eps_values: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    /// Natural-log intercept: `ln C`.
    pub intercept: f64,
    pub r_squared: f64,
    /// Slope of a quadratic log-log fit at the smallest `eps` minus its slope
    /// at the largest. A floor makes this negative.
    pub curvature: f64,
    pub curvature_flag: bool,
}

/// Fits `ln err = intercept + slope ln eps` by ordinary least squares.
///
/// Needs at least four pairs, strictly positive errors and strictly
/// decreasing positive `eps`.
pub fn fit_rate(eps: &[f64], err: &[f64]) -> Result<RateFit> {
    if eps.len() != err.len() {
        return Err(Error::DegenerateFit(format!(
            "rate fit: {} eps values but {} errors",
            eps.len(),
            err.len()
        )));
    }
    if eps.len() < 4 {
        return Err(Error::DegenerateFit(format!("rate fit needs at least 4 points, got {}", eps.len())));
    }
    if let Some(i) = err.iter().position(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::DegenerateFit(format!("rate fit: error[{i}] = {} is not positive", err[i])));
    }
    if eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::DegenerateFit(format!(
            "rate fit: eps values must be positive and strictly decreasing, got {eps:?}"
        )));
    }
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let LineFit {
        slope,
        intercept,
        r_squared,
    } = fit_line(&x, &y);
    let mx = x.iter().sum::<f64>() / x.len() as f64;

    let c2 = quadratic_coefficient(&x, &y, mx);
    let span = x[0] - x[x.len() - 1];
    let curvature = -2.0 * c2 * span;
    Ok(RateFit {
        eps_values: eps.to_vec(),
        errors: err.to_vec(),
        slope,
        intercept,
        r_squared,
        curvature,
        curvature_flag: curvature.abs() > CURVATURE_TOLERANCE,
    })
}

/// Ordinary least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through at least two points with distinct `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    LineFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Log-log line `ln y = intercept + slope ln x` for positive data.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DegenerateFit(format!("log-log fit needs 2 matching points, got {} and {}", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::DegenerateFit(String::from("log-log fit needs positive finite data")));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    if lx.iter().all(|v| *v == lx[0]) {
        return Err(Error::DegenerateFit(String::from("log-log fit needs distinct abscissae")));
    }
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    Ok(fit_line(&lx, &ly))
}

/// Leading coefficient of the least-squares parabola through `(x, y)`,
/// computed in the centered variable `x - mx`.
fn quadratic_coefficient(x: &[f64], y: &[f64], mx: f64) -> f64 {
    let mut s = [0.0; 5];
    let mut t = [0.0; 3];
    for (&a, &b) in x.iter().zip(y) {
        let d = a - mx;
        let mut p = 1.0;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += p;
            if k < 3 {
                t[k] += p * b;
            }
            p *= d;
        }
    }
    let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let det = det3(&m);
    if det.abs() <= f64::EPSILON * s[4] * s[2] * s[0] {
        return 0.0;
    }
    let mut m2 = m;
    for r in 0..3 {
        m2[r][2] = t[r];
    }
    det3(&m2) / det
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eps() -> Vec<f64> {
        (3..=7).map(|k| 2f64.powi(-k)).collect()
    }

    #[test]
    fn exact_powers() {
        let e = eps();
        let f = fit_rate(&e, &e.iter().map(|x| x * x).collect::<Vec<_>>()).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(!f.curvature_flag);
        let f = fit_rate(&e, &e.iter().map(|x| 3.0 * x.powi(4)).collect::<Vec<_>>()).unwrap();
        assert!((f.slope - 4.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_input_is_refused() {
        let e = eps();
        assert!(fit_rate(&e[..3], &e[..3]).is_err());
        let mut bad = e.clone();
        bad[2] = 0.0;
        assert!(fit_rate(&e, &bad).is_err());
        let mut rev = e.clone();
        rev.reverse();
        assert!(fit_rate(&rev, &e).is_err());
    }
}
