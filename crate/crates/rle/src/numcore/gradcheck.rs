//! Central finite-difference gradient estimation for verifying analytic
//! gradients. Lives in the library so the `check` command and the test
//! suites share one oracle; it stays independent of every backward pass it
//! verifies.

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
pub fn finite_diff_grad<F>(f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut perturbed = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        perturbed[i] = params[i] + h;
        let plus = f(&perturbed);
        perturbed[i] = params[i] - h;
        let minus = f(&perturbed);
        perturbed[i] = params[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Worst relative disagreement between two gradient vectors. Components
/// whose absolute difference is below `abs_floor` count as exact matches.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if diff <= abs_floor {
                0.0
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}
