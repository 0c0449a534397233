/// Central-difference gradient check.
///
/// Perturbs each coordinate of `params` by `±step`, estimates the derivative
/// as `(f(θ+h) - f(θ-h)) / 2h`, and returns the largest
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn finite_difference_check<F>(mut f: F, params: &[f64], analytic: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    finite_difference_report(&mut f, params, analytic, step).max_relative_error
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate where the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn finite_difference_report<F>(f: &mut F, params: &[f64], analytic: &[f64], step: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len(), "gradient length must match parameters");
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + step;
        let plus = f(&theta);
        theta[i] = orig - step;
        let minus = f(&theta);
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error || i == 0 {
            report = GradCheckReport {
                max_relative_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    report
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}
