//! Central finite differences for verifying analytic gradients.

/// Central-difference gradient of a scalar function at `point`.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut perturbed = point.to_vec();
    let mut grads = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        perturbed[i] = point[i] + step;
        let plus = f(&perturbed);
        perturbed[i] = point[i] - step;
        let minus = f(&perturbed);
        perturbed[i] = point[i];
        grads.push((plus - minus) / (2.0 * step));
    }
    grads
}

/// Relative error between two gradient values with a unit floor, so tiny
/// gradients are compared absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Worst relative error across two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max)
}
