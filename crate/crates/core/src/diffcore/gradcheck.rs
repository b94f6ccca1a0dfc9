/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares the analytic gradient returned by `f` at `point` against central
/// differences with half-width `step`, one coordinate at a time, and returns
/// the largest relative error.
///
/// `f` maps a flat parameter vector to `(value, gradient)`. Only the value is
/// used for the perturbed evaluations.
pub fn grad_check<F>(mut f: F, point: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(point);
    assert_eq!(
        analytic.len(),
        point.len(),
        "gradient length must match the point"
    );
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let (plus, _) = f(&probe);
        probe[i] = orig - step;
        let (minus, _) = f(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_passes() {
        let err = grad_check(
            |p| (p[0] * p[0] + 3.0 * p[1], vec![2.0 * p[0], 3.0]),
            &[1.5, -2.0],
            1e-5,
        );
        assert!(err < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let err = grad_check(|p| (p[0] * p[0], vec![p[0]]), &[2.0], 1e-5);
        assert!((err - 0.5).abs() < 1e-6);
    }

    #[test]
    fn tiny_values_use_floor_denominator() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-15);
    }
}
