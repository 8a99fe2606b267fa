//! Central-difference gradient verification.

use super::DiffError;

/// Compares an analytic gradient against central differences of `f`.
///
/// `f` must be a deterministic map from parameters to a scalar. Every
/// coordinate of `params` is perturbed by `±epsilon`; the result is
/// `max_i |g_i − cd_i| / max(|g_i|, |cd_i|, 1e-12)`.
pub fn finite_diff_check<F>(
    f: F,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
) -> Result<f64, DiffError>
where
    F: FnMut(&[f64]) -> Result<f64, DiffError>,
{
    let all: Vec<usize> = (0..params.len()).collect();
    finite_diff_check_subset(f, params, analytic, epsilon, &all)
}

/// [`finite_diff_check`] restricted to the coordinates in `indices`.
pub fn finite_diff_check_subset<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
    indices: &[usize],
) -> Result<f64, DiffError>
where
    F: FnMut(&[f64]) -> Result<f64, DiffError>,
{
    if analytic.len() != params.len() {
        return Err(DiffError::Shape {
            op: "finite_diff_check",
            detail: format!("{} gradients for {} params", analytic.len(), params.len()),
        });
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for &i in indices {
        probe[i] = params[i] + epsilon;
        let plus = f(&probe)?;
        probe[i] = params[i] - epsilon;
        let minus = f(&probe)?;
        probe[i] = params[i];
        let cd = (plus - minus) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], cd));
    }
    Ok(worst)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}
