//! Central finite-difference gradient verification.
//!
//! The checker only re-evaluates the forward pass, so it stays independent of
//! the reverse-mode path it validates. Run it in f64: the default step 1e-5
//! needs double precision to stay above rounding noise.

use super::graph::ParamSet;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compare `params.grad` (already populated by a backward pass) against
/// central finite differences of `loss` with the given step.
///
/// An element passes if the absolute difference is below 1e-7 or the
/// relative difference is below the caller's tolerance; the report carries
/// the worst relative error seen.
pub fn finite_diff_report<F>(params: &mut ParamSet<f64>, mut loss: F, step: f64) -> GradCheckReport
where
    F: FnMut(&ParamSet<f64>) -> f64,
{
    let names: Vec<String> = params.names().cloned().collect();
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    for name in names {
        let len = params.value(&name).len();
        for i in 0..len {
            let orig = params.value(&name).data()[i];
            params.get_mut(&name).value.data_mut()[i] = orig + step;
            let lp = loss(params);
            params.get_mut(&name).value.data_mut()[i] = orig - step;
            let lm = loss(params);
            params.get_mut(&name).value.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * step);
            let an = params.get(&name).grad.data()[i];
            let diff = (an - fd).abs();
            let rel = if diff <= 1e-7 { 0.0 } else { diff / an.abs().max(fd.abs()).max(1e-12) };
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{name}[{i}] analytic={an} fd={fd}");
            }
            checked += 1;
        }
    }
    GradCheckReport { max_rel_err: max_rel, worst, checked }
}

/// Assert helper used across the test suites.
pub fn assert_gradients_match<F>(params: &mut ParamSet<f64>, loss: F, tol: f64)
where
    F: FnMut(&ParamSet<f64>) -> f64,
{
    let report = finite_diff_report(params, loss, 1e-5);
    assert!(
        report.passes(tol),
        "gradient check failed: max rel err {} at {} ({} elements)",
        report.max_rel_err,
        report.worst,
        report.checked
    );
}
