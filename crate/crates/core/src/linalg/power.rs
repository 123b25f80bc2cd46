use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::matrix::{dot, norm2, Matrix};

pub const MAX_ITERATIONS: usize = 500;
pub const RELATIVE_TOL: f64 = 1e-9;

/// A linear map given only through its action and the action of its adjoint.
pub trait LinearOperator {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64>;
}

impl LinearOperator for Matrix {
    fn in_dim(&self) -> usize {
        self.cols()
    }
    fn out_dim(&self) -> usize {
        self.rows()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matvec(x)
    }
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.matvec_t(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralNormEstimate {
    pub value: f64,
    pub iterations: usize,
    /// `‖AᵀA v − σ² v‖ / σ²` at the final iterate.
    pub residual: f64,
    pub converged: bool,
}

/// Largest singular value of an implicit operator via power iteration on `AᵀA`.
///
/// The operator is probed for linearity and adjoint consistency first.
pub fn spectral_norm_operator(op: &dyn LinearOperator, seed: u64) -> Result<SpectralNormEstimate> {
    let (n_in, n_out) = (op.in_dim(), op.out_dim());
    if n_in == 0 || n_out == 0 {
        return Err(Error::shape(
            "spectral_norm_operator",
            "non-empty operator",
            format!("{n_out}x{n_in}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    probe_linearity(op, &mut rng)?;

    let mut v: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut sigma_prev = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        let av = op.apply(&v);
        let s2 = dot(&av, &av);
        if s2 == 0.0 {
            // v may lie in the null space by accident; a zero operator maps everything to 0.
            let w = op.apply_transpose(&av);
            if norm2(&w) == 0.0 && is_zero_operator(op, &mut rng) {
                return Ok(SpectralNormEstimate {
                    value: 0.0,
                    iterations: it,
                    residual: 0.0,
                    converged: true,
                });
            }
            v = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
            normalize(&mut v);
            continue;
        }
        let w = op.apply_transpose(&av);
        residual = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - s2 * vi).powi(2))
            .sum::<f64>()
            .sqrt()
            / s2;
        let sigma = s2.sqrt();
        let change = (sigma - sigma_prev).abs() / sigma;
        if residual <= RELATIVE_TOL || change <= 1e-15 {
            return Ok(SpectralNormEstimate {
                value: sigma,
                iterations: it,
                residual,
                converged: true,
            });
        }
        sigma_prev = sigma;
        v = w;
        normalize(&mut v);
    }
    let av = op.apply(&v);
    Ok(SpectralNormEstimate {
        value: norm2(&av),
        iterations: MAX_ITERATIONS,
        residual,
        converged: false,
    })
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn is_zero_operator(op: &dyn LinearOperator, rng: &mut ChaCha8Rng) -> bool {
    (0..3).all(|_| {
        let x: Vec<f64> = (0..op.in_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        op.apply(&x).iter().all(|&y| y == 0.0)
    })
}

fn probe_linearity(op: &dyn LinearOperator, rng: &mut ChaCha8Rng) -> Result<()> {
    let n_in = op.in_dim();
    let n_out = op.out_dim();
    for _ in 0..3 {
        let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let lhs = op.apply(&combo);
        let ax = op.apply(&x);
        let ay = op.apply(&y);
        if lhs.len() != n_out || ax.len() != n_out {
            return Err(Error::shape("operator output", n_out, lhs.len()));
        }
        let rhs: Vec<f64> = ax.iter().zip(&ay).map(|(p, q)| a * p + b * q).collect();
        let err = lhs.iter().zip(&rhs).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let scale = a.abs() * norm2(&ax) + b.abs() * norm2(&ay);
        if err > 1e-9 * scale + 1e-12 {
            return Err(Error::Contract(format!(
                "operator failed linearity probe (error {err:e}, scale {scale:e})"
            )));
        }
        let z: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let atz = op.apply_transpose(&z);
        if atz.len() != n_in {
            return Err(Error::shape("operator adjoint output", n_in, atz.len()));
        }
        let (p, q) = (dot(&ax, &z), dot(&x, &atz));
        let adj_scale = norm2(&ax) * norm2(&z) + norm2(&x) * norm2(&atz);
        if (p - q).abs() > 1e-9 * adj_scale + 1e-12 {
            return Err(Error::Contract(format!(
                "operator adjoint inconsistent: <Ax,z>={p:e}, <x,Aᵀz>={q:e}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd::svd;

    struct Squarer;
    impl LinearOperator for Squarer {
        fn in_dim(&self) -> usize {
            2
        }
        fn out_dim(&self) -> usize {
            2
        }
        fn apply(&self, x: &[f64]) -> Vec<f64> {
            x.iter().map(|v| v * v).collect()
        }
        fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
            y.to_vec()
        }
    }

    #[test]
    fn diagonal_operator() {
        let est = spectral_norm_operator(&Matrix::from_diag(&[2.0, 5.0]), 0).unwrap();
        assert!((est.value - 5.0).abs() < 1e-9);
        assert!(est.converged);
    }

    #[test]
    fn zero_operator() {
        let est = spectral_norm_operator(&Matrix::zeros(3, 4), 1).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn nonlinear_map_is_rejected() {
        assert!(matches!(spectral_norm_operator(&Squarer, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn agrees_with_dense_svd() {
        let a = Matrix::from_rows(&[
            vec![1.0, -2.0, 0.5, 3.0],
            vec![0.3, 0.7, -1.1, 0.2],
            vec![2.2, 0.1, 0.4, -0.6],
        ])
        .unwrap();
        let est = spectral_norm_operator(&a, 7).unwrap();
        let exact = svd(&a).unwrap().sigma[0];
        assert!((est.value - exact).abs() / exact < 1e-8, "{} vs {}", est.value, exact);
    }
}
