use crate::error::{Error, Result};

use super::matrix::Matrix;
use super::svd::singular_values;

/// Singular values below this are treated as underflow for log-determinants.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// `‖v‖_p` for `p ≥ 1`; pass `f64::INFINITY` for the max norm.
pub fn vector_p_norm(v: &[f64], p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::Contract(format!("p-norm requires p >= 1, got {p}")));
    }
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if p.is_infinite() || max == 0.0 {
        return Ok(max);
    }
    if p == 1.0 {
        return Ok(v.iter().map(|x| x.abs()).sum());
    }
    if p == 2.0 {
        let s: f64 = v.iter().map(|x| (x / max).powi(2)).sum();
        return Ok(max * s.sqrt());
    }
    let s: f64 = v.iter().map(|x| (x.abs() / max).powf(p)).sum();
    Ok(max * s.powf(1.0 / p))
}

/// `½ log det(J Jᵀ)` computed as the sum of log singular values over the
/// `min(rows, cols)` singular values. Returns `-∞` when any singular value is
/// below [`UNDERFLOW_FLOOR`].
pub fn log_pseudo_det_gram(j: &Matrix) -> Result<f64> {
    let sigma = singular_values(j)?;
    if sigma.iter().any(|&s| s < UNDERFLOW_FLOOR) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(sigma.iter().map(|s| s.ln()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_norms_of_three_four() {
        let v = [3.0, 4.0];
        assert_eq!(vector_p_norm(&v, 2.0).unwrap(), 5.0);
        assert_eq!(vector_p_norm(&v, 1.0).unwrap(), 7.0);
        assert_eq!(vector_p_norm(&v, f64::INFINITY).unwrap(), 4.0);
        assert!(vector_p_norm(&v, 0.5).is_err());
        assert!(vector_p_norm(&v, f64::NAN).is_err());
    }

    #[test]
    fn log_det_closed_forms() {
        let d = log_pseudo_det_gram(&Matrix::from_diag(&[2.0, 3.0])).unwrap();
        assert!((d - 6.0_f64.ln()).abs() < 1e-14);
        let row = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert!((log_pseudo_det_gram(&row).unwrap() - 0.5 * 2.0_f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn singular_jacobian_is_flagged() {
        let j = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(log_pseudo_det_gram(&j).unwrap(), f64::NEG_INFINITY);
    }
}
