//! Central finite differences, used as the oracle for every analytic gradient.

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Pass threshold on the maximum relative error.
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor below which an analytic/numeric pair is compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// `(f(x + h·eᵢ) - f(x - h·eᵢ)) / 2h` for every coordinate `i`.
pub fn finite_diff_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let fp = f(&probe);
            probe[i] = orig - h;
            let fm = f(&probe);
            probe[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
