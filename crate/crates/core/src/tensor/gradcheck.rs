use crate::error::{invalid, Error, Result};

/// Compares an analytic gradient against central differences.
///
/// Returns `max_i |g_i - fd_i| / max(|g_i|, |fd_i|, 1e-8)`.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    if point.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} coordinates, {} gradient entries",
            point.len(),
            analytic.len()
        )));
    }
    let mut p = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p);
        p[i] = orig - eps;
        let down = f(&p);
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        let fd = (up - down) / (2.0 * eps);
        let g = analytic[i];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_passes() {
        let point = [0.3, -1.2, 2.5, 0.0];
        let analytic: Vec<f64> = point.iter().map(|p| 2.0 * p).collect();
        let err = grad_check(|p| p.iter().map(|v| v * v).sum(), &point, &analytic, 1e-4).unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let point = [0.3, -1.2, 2.5];
        let analytic: Vec<f64> = point.iter().map(|p| 2.0 * p * 1.01).collect();
        let err = grad_check(|p| p.iter().map(|v| v * v).sum(), &point, &analytic, 1e-4).unwrap();
        assert!(err >= 5e-3, "{err}");
    }

    #[test]
    fn non_finite_objective_errors() {
        let r = grad_check(|p| 1.0 / (p[0] - 1e-5), &[0.0], &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
