//! Central finite-difference verification of tape gradients.

use super::params::{Grads, ParamStore};

/// Denominator floor for the relative error, so entries whose true gradient
/// is essentially zero are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(tensor name, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// Compare the analytic gradient returned by `f` against central
/// differences with step `h`, element by element.
pub fn check_gradients<F>(params: &ParamStore, f: F, h: f64) -> GradCheckReport
where
    F: Fn(&ParamStore) -> (f64, Grads),
{
    let (_, analytic) = f(params);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for (ti, t) in params.tensors().iter().enumerate() {
        for j in 0..t.len() {
            let orig = t.data[j];
            work.tensors_mut()[ti].data[j] = orig + h;
            let up = f(&work).0;
            work.tensors_mut()[ti].data[j] = orig - h;
            let down = f(&work).0;
            work.tensors_mut()[ti].data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data[ti][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.checked += 1;
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = Some((t.name.clone(), j, a, numeric));
            }
        }
    }
    report
}
