//! Central finite-difference verification of backprop gradients.

/// Compares an analytic (backprop) gradient against central finite differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` on every coordinate and returns the maximum
/// relative deviation `|ad − fd| / max(|ad| + |fd|, 1e-6)`.
///
/// `epsilon` must lie in `[1e-7, 1e-3]`.
pub fn gradient_check(
    mut eval: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    backprop_grad: &[f64],
    epsilon: f64,
) -> f64 {
    assert!(
        (1e-7..=1e-3).contains(&epsilon),
        "epsilon {epsilon} outside [1e-7, 1e-3]"
    );
    assert_eq!(
        theta.len(),
        backprop_grad.len(),
        "gradient length mismatch"
    );
    let mut work = theta.to_vec();
    let mut max_dev = 0.0f64;
    for j in 0..theta.len() {
        let orig = work[j];
        work[j] = orig + epsilon;
        let f_plus = eval(&work);
        work[j] = orig - epsilon;
        let f_minus = eval(&work);
        work[j] = orig;
        let fd = (f_plus - f_minus) / (2.0 * epsilon);
        let ad = backprop_grad[j];
        let dev = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-6);
        max_dev = max_dev.max(dev);
    }
    max_dev
}
