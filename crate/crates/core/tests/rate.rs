use korteweg_core::fit_rate;
use korteweg_core::rate::{fit_line, fit_loglog};
use proptest::prelude::*;

fn halvings(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 2f64.powi(-k)).collect()
}

#[test]
fn floor_is_detected_by_fit_quality_and_curvature() {
    let eps = halvings(3, 9);
    let err: Vec<f64> = eps.iter().map(|e| e * e + 1e-5).collect();
    let fit = fit_rate(&eps, &err).unwrap();
    assert!(fit.slope < 2.0);
    assert!(fit.r_squared < 0.999, "r2 {}", fit.r_squared);
    assert!(fit.curvature_flag && fit.curvature < 0.0, "curvature {}", fit.curvature);

    let clean: Vec<f64> = eps.iter().map(|e| e * e).collect();
    let fit = fit_rate(&eps, &clean).unwrap();
    assert!((fit.slope - 2.0).abs() < 1e-12 && !fit.curvature_flag);
}

#[test]
fn frozen_linear_functional_has_unit_slope() {
    // Phi = A + eps B with A = 0: exactly linear in eps.
    let eps = halvings(3, 7);
    let err: Vec<f64> = eps.iter().map(|e| 0.37 * e).collect();
    let fit = fit_rate(&eps, &err).unwrap();
    assert!((fit.slope - 1.0).abs() <= 1e-6);
    assert!((fit.intercept - 0.37f64.ln()).abs() <= 1e-12);
}

#[test]
fn degenerate_inputs_are_refused() {
    assert!(fit_rate(&[0.1, 0.05, 0.025], &[1.0, 0.5, 0.25]).is_err());
    assert!(fit_rate(&[0.1, 0.05, 0.025, 0.0125], &[1.0, 0.0, 0.25, 0.1]).is_err());
    assert!(fit_rate(&[0.1, 0.2, 0.025, 0.0125], &[1.0, 0.5, 0.25, 0.1]).is_err());
    assert!(fit_loglog(&[1.0, 2.0], &[1.0, -1.0]).is_err());
}

proptest! {
    #[test]
    fn exact_power_laws_are_recovered(p in 0.2..5.0f64, c in 1e-3..1e3f64, first in 1i32..4, count in 4i32..8) {
        let eps = halvings(first, first + count - 1);
        let err: Vec<f64> = eps.iter().map(|e| c * e.powf(p)).collect();
        let fit = fit_rate(&eps, &err).unwrap();
        prop_assert!((fit.slope - p).abs() <= 1e-10);
        prop_assert!((fit.intercept - c.ln()).abs() <= 1e-9);
        prop_assert!(fit.r_squared > 1.0 - 1e-12);
        prop_assert!(!fit.curvature_flag);
    }

    #[test]
    fn line_fit_is_exact_on_lines(a in -10.0..10.0f64, b in -10.0..10.0f64, n in 2usize..20) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.7 - 3.0).collect();
        let y: Vec<f64> = x.iter().map(|x| a + b * x).collect();
        let fit = fit_line(&x, &y);
        prop_assert!((fit.slope - b).abs() <= 1e-10 && (fit.intercept - a).abs() <= 1e-10);
    }
}
