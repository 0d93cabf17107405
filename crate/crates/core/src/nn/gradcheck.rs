//! Central finite-difference checking for hand-written gradients.

/// d f / d params[i] approximated by (f(p + h e_i) - f(p - h e_i)) / 2h.
pub fn central_difference<F>(mut f: F, params: &[f64], i: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut plus = params.to_vec();
    let mut minus = params.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Symmetric relative error with an absolute floor so near-zero pairs
/// compare by absolute difference instead of blowing up.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-8)
}

/// Largest relative error between an analytic gradient vector and central
/// differences of `f`, probing every coordinate.
pub fn max_relative_error<F>(mut f: F, params: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut worst = 0.0_f64;
    for (i, a) in analytic.iter().enumerate() {
        let fd = central_difference(&mut f, params, i, h);
        worst = worst.max(relative_error(*a, fd));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_is_exact_on_quadratics() {
        // f(x) = 3x0^2 + x0 x1; central differences have no second-order error.
        let f = |p: &[f64]| 3.0 * p[0] * p[0] + p[0] * p[1];
        let at = [1.5, -2.0];
        let d0 = central_difference(f, &at, 0, 1e-4);
        let d1 = central_difference(f, &at, 1, 1e-4);
        assert!((d0 - (6.0 * 1.5 - 2.0)).abs() < 1e-9);
        assert!((d1 - 1.5).abs() < 1e-9);
    }

    #[test]
    fn max_relative_error_flags_a_wrong_entry() {
        let f = |p: &[f64]| p[0] * p[0] + p[1] * p[1];
        let at = [1.0, 2.0];
        let good = [2.0, 4.0];
        let bad = [2.0, 3.0];
        assert!(max_relative_error(f, &at, &good, 1e-5) < 1e-8);
        assert!(max_relative_error(f, &at, &bad, 1e-5) > 0.1);
    }
}
