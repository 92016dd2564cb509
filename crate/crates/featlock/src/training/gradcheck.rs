/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub passed: bool,
}

/// Compares `f`'s analytic gradient at `params` with central finite
/// differences of step `eps`. Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(f: F, params: &[f64], eps: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut p = params.to_vec();
    let mut report = GradCheckReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        worst_index: 0,
        checked: params.len(),
        passed: true,
    };
    for i in 0..params.len() {
        p[i] = params[i] + eps;
        let up = f(&p).0;
        p[i] = params[i] - eps;
        let down = f(&p).0;
        p[i] = params[i];
        let numeric = (up - down) / (2.0 * eps);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(1e-6);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report.passed = report.max_rel_error < tol;
    report
}
