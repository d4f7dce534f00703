use crate::error::{Error, Result};

/// Floor of the denominator in [`relative_error`].
pub const REL_ERROR_EPS: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|, ε)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_EPS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Offender {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Largest offenders, worst first.
    pub worst: Vec<Offender>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

const WORST_KEPT: usize = 5;

/// Compares `analytic` against central differences `(f(θ+h) − f(θ−h)) / 2h`
/// for every coordinate of `params`.
pub fn finite_diff_check(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!("{} parameters but {} analytic gradients", params.len(), analytic.len())));
    }
    if let Some(i) = params.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid("parameters", format!("non-finite value at {i}")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("step", format!("{step} must be positive")));
    }
    let first = f(params);
    let second = f(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut theta = params.to_vec();
    let mut offenders = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + step;
        let plus = f(&theta);
        theta[i] = orig - step;
        let minus = f(&theta);
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        offenders.push(Offender {
            index: i,
            analytic: analytic[i],
            numeric,
            rel_error: relative_error(analytic[i], numeric),
        });
    }
    offenders.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    let max_rel_error = offenders.first().map_or(0.0, |o| o.rel_error);
    offenders.truncate(WORST_KEPT);
    Ok(GradCheckReport { checked: params.len(), max_rel_error, tolerance, worst: offenders })
}
