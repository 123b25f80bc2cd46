use crate::error::{Error, Result};

use super::matrix::Matrix;

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;
/// Relative tolerance below which negative Gram eigenvalues are rounding noise.
pub const GRAM_CLAMP_TOL: f64 = 1e-12;

/// Eigenvalues of a symmetric matrix, sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn sum(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l * l).sum()
    }
}

/// Cyclic Jacobi eigenvalue iteration for symmetric matrices.
pub fn sym_eig(a: &Matrix) -> Result<Spectrum> {
    let n = a.rows();
    if n != a.cols() || n == 0 {
        return Err(Error::shape(
            "sym_eig",
            "non-empty square matrix",
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    let scale = a.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (a.get(i, j) - a.get(j, i)).abs();
            if d > SYMMETRY_TOL * scale {
                return Err(Error::Contract(format!(
                    "sym_eig: matrix not symmetric at ({i}, {j}), |a_ij - a_ji| = {d:e}"
                )));
            }
        }
    }

    let mut m = a.clone();
    // Symmetrize exactly so the rotations stay consistent.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, avg);
            m.set(j, i, avg);
        }
    }
    let total = m.frobenius_norm();
    let mut off = off_diagonal_norm(&m);
    let mut sweeps = 0;
    while off > 1e-15 * total && off > f64::MIN_POSITIVE {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NumericFailure {
                context: format!("Jacobi eigenvalue iteration ({n}x{n}) did not converge"),
                residual: off / total,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let kp = m.get(k, p);
                    let kq = m.get(k, q);
                    m.set(k, p, c * kp - s * kq);
                    m.set(k, q, s * kp + c * kq);
                }
                for k in 0..n {
                    let pk = m.get(p, k);
                    let qk = m.get(q, k);
                    m.set(p, k, c * pk - s * qk);
                    m.set(q, k, s * pk + c * qk);
                }
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);
            }
        }
        off = off_diagonal_norm(&m);
    }

    let mut eigenvalues: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    Ok(Spectrum { eigenvalues })
}

/// Spectrum of `J Jᵀ`, with rounding-level negative eigenvalues clamped to 0.
pub fn gram_spectrum(j: &Matrix) -> Result<Spectrum> {
    let mut spec = sym_eig(&j.gram_rows())?;
    let max_abs = spec.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    for l in &mut spec.eigenvalues {
        if *l < 0.0 {
            if *l < -GRAM_CLAMP_TOL * max_abs {
                return Err(Error::NumericFailure {
                    context: "Gram matrix has a materially negative eigenvalue".into(),
                    residual: *l,
                });
            }
            *l = 0.0;
        }
    }
    Ok(spec)
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m.get(i, j) * m.get(i, j);
            }
        }
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_gram_scalar() {
        let s = sym_eig(&Matrix::from_diag(&[1.0, 2.0])).unwrap();
        assert_eq!(s.eigenvalues, vec![2.0, 1.0]);
        let j = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(gram_spectrum(&j).unwrap().eigenvalues, vec![2.0]);
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::Contract(_))));
    }

    #[test]
    fn two_by_two_closed_form() {
        // [[2,1],[1,2]] -> 3, 1
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let s = sym_eig(&a).unwrap();
        assert!((s.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_gram_is_clamped() {
        let j = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        let s = gram_spectrum(&j).unwrap();
        assert!(s.eigenvalues.iter().all(|&l| l >= 0.0));
        assert!((s.eigenvalues[0] - 70.0).abs() < 1e-12);
    }
}
