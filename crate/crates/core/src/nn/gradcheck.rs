/// Below this magnitude gradients are compared in absolute terms; central
/// differences cannot resolve them relative to their own size.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Largest coordinate-wise relative error between `analytic` and central
/// differences of `value` at `theta` with step `h`.
///
/// Relative error is `|a - n| / max(GRAD_FLOOR, |a| + |n|)`.
pub fn gradient_check(mut value: impl FnMut(&[f64]) -> f64, analytic: &[f64], theta: &[f64], h: f64) -> f64 {
    assert_eq!(analytic.len(), theta.len(), "gradient length");
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let plus = value(&probe);
        probe[i] = theta[i] - h;
        let minus = value(&probe);
        probe[i] = theta[i];
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max(err);
    }
    worst
}
