use super::params::{grad, BoundParams, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{GspnError, Result};

/// Outcome of comparing analytic gradients to central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// `max |analytic - numeric| / (|numeric| + 1e-8)` over all coordinates.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Checks reverse-mode gradients of `objective` against central finite
/// differences `(f(p + eps) - f(p - eps)) / 2 eps` on every raw coordinate.
pub fn finite_diff_check<F>(objective: F, params: &ParamStore, eps: f64) -> Result<FdReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(GspnError::InvalidParameter(format!(
            "finite-difference step must lie in (0, 1e-2], got {eps}"
        )));
    }
    let (_, analytic) = grad(&objective, params)?;
    let eval = |ps: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape);
        let root = objective(&mut tape, &bound)?;
        Ok(tape.value(root).item())
    };

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in names {
        let len = params.get(&name).unwrap().raw.len();
        for i in 0..len {
            let orig = params.get(&name).unwrap().raw.data()[i];
            probe.get_mut(&name).unwrap().raw.data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(&name).unwrap().raw.data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(&name).unwrap().raw.data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let exact = analytic[&name].data()[i];
            let err = (exact - numeric).abs() / (numeric.abs() + 1e-8);
            report.coordinates += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
