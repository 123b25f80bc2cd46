use crate::error::{Error, Result};

use super::matrix::{dot, norm2, Matrix};

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;

/// Thin singular value decomposition `A = U diag(σ) Vᵀ` with
/// `k = min(rows, cols)` singular values in descending order.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows × k`, orthonormal columns.
    pub u: Matrix,
    pub sigma: Vec<f64>,
    /// `k × cols`, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.sigma.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for j in 0..k {
                us.set(i, j, us.get(i, j) * self.sigma[j]);
            }
        }
        us.matmul(&self.vt).expect("svd factors chain")
    }

    pub fn largest(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::shape(
            "svd",
            "non-empty matrix",
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    if !a.is_finite() {
        return Err(Error::Contract("svd input has non-finite entries".into()));
    }
    if a.rows() >= a.cols() {
        let (u, sigma, v) = jacobi_tall(a)?;
        Ok(SvdResult {
            u,
            sigma,
            vt: v.transpose(),
        })
    } else {
        // A = (Aᵀ)ᵀ = (U' Σ V'ᵀ)ᵀ = V' Σ U'ᵀ
        let (u_t, sigma, v_t) = jacobi_tall(&a.transpose())?;
        Ok(SvdResult {
            u: v_t,
            sigma,
            vt: u_t.transpose(),
        })
    }
}

/// Singular values only.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(a)?.sigma)
}

/// Jacobi on a tall matrix (`rows >= cols`); returns `(U, σ, V)`.
fn jacobi_tall(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let m = a.rows();
    let n = a.cols();
    // Column-major working copies.
    let mut g: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n == 1;
    let mut residual = 0.0;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        residual = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&g[p], &g[p]);
                let beta = dot(&g[q], &g[q]);
                let gamma = dot(&g[p], &g[q]);
                if alpha == 0.0 || beta == 0.0 || gamma == 0.0 {
                    continue;
                }
                let off = gamma.abs() / (alpha * beta).sqrt();
                residual = residual.max(off);
                if off <= ORTHO_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut g, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericFailure {
            context: format!("one-sided Jacobi SVD ({m}x{n}) did not converge"),
            residual,
        });
    }

    let mut order: Vec<(usize, f64)> = g.iter().map(|c| norm2(c)).enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let sigma_max = order.first().map_or(0.0, |o| o.1);
    let tiny = sigma_max * f64::EPSILON * (m.max(n) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (idx, s) in &order {
        if *s > tiny && *s > 0.0 {
            u_cols.push(g[*idx].iter().map(|x| x / s).collect());
        } else {
            deficient.push(u_cols.len());
            u_cols.push(vec![0.0; m]);
        }
        sigma.push(*s);
        v_cols.push(v[*idx].clone());
    }
    complete_orthonormal(&mut u_cols, &deficient);

    let mut u = Matrix::zeros(m, n);
    for (j, col) in u_cols.iter().enumerate() {
        for (i, val) in col.iter().enumerate() {
            u.set(i, j, *val);
        }
    }
    let mut vm = Matrix::zeros(n, n);
    for (j, col) in v_cols.iter().enumerate() {
        for (i, val) in col.iter().enumerate() {
            vm.set(i, j, *val);
        }
    }
    Ok((u, sigma, vm))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Replaces the columns listed in `slots` with unit vectors orthogonal to all
/// other columns (Gram-Schmidt against the standard basis).
fn complete_orthonormal(cols: &mut [Vec<f64>], slots: &[usize]) {
    if slots.is_empty() {
        return;
    }
    let m = cols[0].len();
    let mut basis = 0;
    for &slot in slots {
        while basis < m {
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for (j, col) in cols.iter().enumerate() {
                    if j == slot || (slots.contains(&j) && norm2(col) == 0.0) {
                        continue;
                    }
                    let proj = dot(&cand, col);
                    for (c, x) in cand.iter_mut().zip(col) {
                        *c -= proj * x;
                    }
                }
            }
            let nrm = norm2(&cand);
            if nrm > 0.5 {
                cols[slot] = cand.iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn rel_recon_err(a: &Matrix) -> f64 {
        let s = svd(a).unwrap();
        s.reconstruct().sub(a).unwrap().frobenius_norm() / a.frobenius_norm()
    }

    #[test]
    fn identity_and_diagonal() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
        let s = svd(&Matrix::from_diag(&[3.0, 4.0])).unwrap();
        assert!((s.sigma[0] - 4.0).abs() < 1e-15 && (s.sigma[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn random_tall_and_wide_reconstruct() {
        assert!(rel_recon_err(&random(5, 3, 1)) < 1e-10);
        assert!(rel_recon_err(&random(3, 8, 2)) < 1e-10);
        assert!(rel_recon_err(&random(64, 64, 3)) < 1e-10);
    }

    #[test]
    fn factors_are_orthonormal_even_when_rank_deficient() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let s = svd(&a).unwrap();
        assert!(s.sigma[1].abs() < 1e-12);
        let utu = s.u.transpose().matmul(&s.u).unwrap();
        assert!(utu.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-12);
        assert!(rel_recon_err(&a) < 1e-12);
    }

    #[test]
    fn zero_matrix() {
        let s = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(s.sigma, vec![0.0, 0.0]);
        let utu = s.u.transpose().matmul(&s.u).unwrap();
        assert!(utu.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn sigma_sorted_nonnegative() {
        let s = svd(&random(7, 4, 9)).unwrap();
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.sigma.iter().all(|&x| x >= 0.0));
    }
}
