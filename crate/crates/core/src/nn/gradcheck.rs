use crate::error::{input_err, Error, Result};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that near-zero
/// gradients are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central finite differences of `loss` at `params`.
///
/// `coords` selects which coordinates to probe; `None` probes all of them.
pub fn grad_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(input_err!("finite-difference epsilon {epsilon} outside [1e-6, 1e-4]"));
    }
    if params.len() != analytic.len() {
        return Err(input_err!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        ));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let plus = loss(&probe)?;
        probe[i] = orig - epsilon;
        let minus = loss(&probe)?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss while probing coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}
