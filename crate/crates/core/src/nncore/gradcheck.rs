/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate where it occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic` against central differences of `f` around `x`.
///
/// The relative error of coordinate `i` is
/// `|a_i - n_i| / max(|a_i|, |n_i|, 1e-3 * max_j |a_j|, 1e-12)`: components
/// that are tiny next to the gradient's largest entry are judged against
/// that scale instead of their own magnitude.
pub fn finite_diff_check(
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> GradCheckReport {
    assert_eq!(
        x.len(),
        analytic.len(),
        "gradient length must match parameter count"
    );
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if err > report.max_rel_error || !err.is_finite() {
            report = GradCheckReport {
                max_rel_error: if err.is_finite() { err } else { f64::INFINITY },
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_quadratic() {
        let x = [1.0, -2.0, 0.5];
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = finite_diff_check(&x, &grad, 1e-6, |p| p.iter().map(|v| v * v).sum());
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = [1.0, 2.0];
        let r = finite_diff_check(&x, &[1.0, 0.0], 1e-6, |p| p[0] + p[1]);
        assert_eq!(r.worst_index, 1);
        assert!(r.max_rel_error > 0.5);
    }
}
