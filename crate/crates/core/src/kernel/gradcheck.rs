//! Central finite-difference verification of analytic gradients.

use super::{deterministic_mode, set_deterministic};
use crate::error::{Error, Result};

/// Gradients with both analytic and numeric magnitude below this are
/// counted as resolved-to-zero. A central difference of an O(10) objective
/// carries about one ulp of noise, ~1e-10 after division by 2*eps, so
/// relative error is meaningless below the threshold.
pub const FD_RESOLUTION: f64 = 1e-6;

/// Compare an analytic gradient against central finite differences.
///
/// `f` evaluates the scalar objective at a flat parameter vector;
/// `analytic` is the gradient to verify, aligned with `theta`. Returns the
/// maximum over parameters of
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`,
/// skipping entries below [`FD_RESOLUTION`] on both sides.
///
/// Dropout-free deterministic mode is forced for the duration of the check.
pub fn grad_check<F>(theta: &mut [f64], analytic: &[f64], mut f: F, eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::Contract(format!("grad_check eps must be > 0, got {}", eps)));
    }
    if theta.len() != analytic.len() {
        return Err(Error::Dim(format!(
            "grad_check: {} params vs {} gradient entries",
            theta.len(),
            analytic.len()
        )));
    }
    let was = deterministic_mode();
    set_deterministic(true);
    let result = (|| {
        let mut max_rel = 0.0f64;
        for i in 0..theta.len() {
            let orig = theta[i];
            theta[i] = orig + eps;
            let up = f(theta)?;
            theta[i] = orig - eps;
            let down = f(theta)?;
            theta[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite objective at parameter {} ({}, {})",
                    i, up, down
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            if analytic[i].abs() <= FD_RESOLUTION && numeric.abs() <= FD_RESOLUTION {
                continue;
            }
            let rel = (analytic[i] - numeric).abs()
                / (analytic[i].abs() + numeric.abs()).max(1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        Ok(max_rel)
    })();
    set_deterministic(was);
    result
}
