//! Brute-force reference computations used to check the analytic paths.
//!
//! Nothing here touches the reverse-mode code: forward evaluation is a
//! separate straight-line walk over the layer stack (with a naive direct
//! convolution), derivatives are central differences, and determinants come
//! from LU factorization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::{Conv2d, Layer, Network};

/// Exact per-coordinate second differences up to this many parameters.
pub const EXACT_TRACE_MAX_PARAMS: usize = 2000;
pub const HUTCHINSON_PROBES: usize = 64;
/// Relative finite-difference step for Hessian diagonals.
pub const HESSIAN_STEP: f64 = 1e-4;
/// Relative finite-difference step for Jacobians.
pub const JACOBIAN_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub max_abs_err: f64,
    /// Largest `|a − o| / max(|o|, abs_tol / rel_tol)`.
    pub max_rel_err: f64,
    pub n_points: usize,
    pub pass: bool,
    pub tolerance: f64,
}

impl OracleReport {
    /// Entrywise comparison passing when every entry satisfies
    /// `|a − o| ≤ max(rel_tol·|o|, abs_tol)`.
    pub fn compare(name: impl Into<String>, analytic: &[f64], oracle: &[f64], rel_tol: f64, abs_tol: f64) -> Self {
        let floor = abs_tol / rel_tol;
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        for (a, o) in analytic.iter().zip(oracle) {
            let d = (a - o).abs();
            max_abs = max_abs.max(d);
            let rel = if d.is_nan() {
                f64::INFINITY
            } else {
                d / o.abs().max(floor)
            };
            max_rel = max_rel.max(rel);
        }
        if analytic.len() != oracle.len() {
            max_rel = f64::INFINITY;
        }
        Self {
            name: name.into(),
            max_abs_err: max_abs,
            max_rel_err: max_rel,
            n_points: analytic.len().min(oracle.len()),
            pass: max_rel <= rel_tol,
            tolerance: rel_tol,
        }
    }

    /// Folds several reports into one.
    pub fn merge(name: impl Into<String>, reports: &[OracleReport]) -> Self {
        let tolerance = reports.first().map_or(0.0, |r| r.tolerance);
        let max_abs_err = reports.iter().map(|r| r.max_abs_err).fold(0.0, f64::max);
        let max_rel_err = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
        Self {
            name: name.into(),
            max_abs_err,
            max_rel_err,
            n_points: reports.iter().map(|r| r.n_points).sum(),
            pass: reports.iter().all(|r| r.pass),
            tolerance,
        }
    }
}

/// Forward pass; when `replace = Some((l, z))` the `l`-th linear layer sees
/// `z` instead of its actual input, while skip connections keep the original.
pub fn reference_forward(net: &Network, x: &[f64], replace: Option<(usize, &[f64])>) -> Vec<f64> {
    let mut counter = 0;
    walk(net.layers(), x.to_vec(), replace, &mut counter)
}

fn walk(layers: &[Layer], mut h: Vec<f64>, replace: Option<(usize, &[f64])>, counter: &mut usize) -> Vec<f64> {
    for layer in layers {
        h = match layer {
            Layer::Residual(block) => {
                let inner = walk(&block.layers, h.clone(), replace, counter);
                (0..h.len()).map(|i| h[i] + inner[i]).collect()
            }
            Layer::Activation { function } => h.iter().map(|&z| function.eval(z)).collect(),
            Layer::Dense(d) => {
                let input = pick(&h, replace, *counter);
                *counter += 1;
                let w = &d.weight;
                (0..w.rows())
                    .map(|r| {
                        let mut s = d.bias.as_ref().map_or(0.0, |b| b[r]);
                        for c in 0..w.cols() {
                            s += w.get(r, c) * input[c];
                        }
                        s
                    })
                    .collect()
            }
            Layer::Conv2d(c) => {
                let input = pick(&h, replace, *counter);
                *counter += 1;
                direct_conv(c, input)
            }
        };
    }
    h
}

fn pick<'a>(h: &'a [f64], replace: Option<(usize, &'a [f64])>, idx: usize) -> &'a [f64] {
    match replace {
        Some((l, z)) if l == idx => z,
        _ => h,
    }
}

fn direct_conv(c: &Conv2d, x: &[f64]) -> Vec<f64> {
    let (oh, ow) = (c.out_height(), c.out_width());
    let mut out = vec![0.0; c.out_channels * oh * ow];
    for o in 0..c.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = c.bias.as_ref().map_or(0.0, |b| b[o]);
                for ic in 0..c.in_channels {
                    for ky in 0..c.kernel_h {
                        for kx in 0..c.kernel_w {
                            let iy = (oy * c.stride + ky) as isize - c.padding as isize;
                            let ix = (ox * c.stride + kx) as isize - c.padding as isize;
                            if iy < 0 || ix < 0 || iy >= c.in_height as isize || ix >= c.in_width as isize {
                                continue;
                            }
                            let w = c.weights[((o * c.in_channels + ic) * c.kernel_h + ky) * c.kernel_w + kx];
                            s += w * x[(ic * c.in_height + iy as usize) * c.in_width + ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = s;
            }
        }
    }
    out
}

/// Inputs to every linear layer, from the reference forward pass.
pub fn reference_layer_inputs(net: &Network, x: &[f64]) -> Vec<Vec<f64>> {
    fn collect(layers: &[Layer], mut h: Vec<f64>, out: &mut Vec<Vec<f64>>) -> Vec<f64> {
        for layer in layers {
            h = match layer {
                Layer::Residual(block) => {
                    let inner = collect(&block.layers, h.clone(), out);
                    (0..h.len()).map(|i| h[i] + inner[i]).collect()
                }
                Layer::Activation { function } => h.iter().map(|&z| function.eval(z)).collect(),
                Layer::Dense(_) | Layer::Conv2d(_) => {
                    out.push(h.clone());
                    walk(std::slice::from_ref(layer), h, None, &mut 0)
                }
            };
        }
        h
    }
    let mut out = Vec::new();
    collect(net.layers(), x.to_vec(), &mut out);
    out
}

fn central_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, at: &[f64], n_out: usize, h: f64) -> Matrix {
    let mut j = Matrix::zeros(n_out, at.len());
    let mut z = at.to_vec();
    for k in 0..at.len() {
        let step = h * (1.0 + at[k].abs());
        z[k] = at[k] + step;
        let plus = f(&z);
        z[k] = at[k] - step;
        let minus = f(&z);
        z[k] = at[k];
        // Effective step after rounding of at[k] ± step.
        let width = (at[k] + step) - (at[k] - step);
        for r in 0..n_out {
            j.set(r, k, (plus[r] - minus[r]) / width);
        }
    }
    j
}

/// `∇_x f` by central differences with step `h·(1+|x_k|)`.
pub fn fd_jacobian(net: &Network, x: &[f64], h: f64) -> Matrix {
    central_jacobian(|z| reference_forward(net, z, None), x, net.output_dim(), h)
}

/// `∇_{x^l} f_l`: central differences in the input of linear layer `l`, with
/// the perturbation fed through that layer only.
pub fn fd_layer_jacobian(net: &Network, x: &[f64], l: usize, h: f64) -> Matrix {
    let xl = reference_layer_inputs(net, x).swap_remove(l);
    central_jacobian(|z| reference_forward(net, x, Some((l, z))), &xl, net.output_dim(), h)
}

/// `(1/n) Σ ½‖f(x_i) − y_i‖²` via the reference forward pass.
pub fn reference_loss(net: &Network, inputs: &Matrix, targets: &Matrix, rows: &[usize]) -> f64 {
    let n = rows.len() as f64;
    rows.iter()
        .map(|&i| {
            let out = reference_forward(net, inputs.row(i), None);
            0.5 * out
                .iter()
                .zip(targets.row(i))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianTrace {
    pub trace: f64,
    /// `true` for exact second differences, `false` for Hutchinson.
    pub exact: bool,
    /// Coordinates (or probes) whose cancellation noise exceeded 1e-3 relative.
    pub flagged: usize,
    pub evaluations: usize,
}

/// Trace of the Hessian of [`reference_loss`] at the network's parameters.
pub fn fd_hessian_trace(
    net: &Network,
    inputs: &Matrix,
    targets: &Matrix,
    rows: &[usize],
    h: f64,
    seed: u64,
) -> Result<HessianTrace> {
    if rows.is_empty() {
        return Err(Error::EmptySamples("hessian trace over no samples".into()));
    }
    let theta = net.params();
    let loss_at = |p: &[f64]| -> f64 {
        let mut probe = net.clone();
        probe.set_params(p).expect("parameter length");
        reference_loss(&probe, inputs, targets, rows)
    };
    let l0 = loss_at(&theta);
    let noise =
        |lp: f64, lm: f64, step: f64| 4.0 * f64::EPSILON * (lp.abs() + 2.0 * l0.abs() + lm.abs()) / (step * step);

    if theta.len() <= EXACT_TRACE_MAX_PARAMS {
        let terms: Vec<(f64, bool)> = (0..theta.len())
            .into_par_iter()
            .map(|j| {
                let step = h * (1.0 + theta[j].abs());
                let mut p = theta.clone();
                p[j] = theta[j] + step;
                let lp = loss_at(&p);
                p[j] = theta[j] - step;
                let lm = loss_at(&p);
                let width = 0.5 * ((theta[j] + step) - (theta[j] - step));
                let d2 = (lp - 2.0 * l0 + lm) / (width * width);
                (d2, noise(lp, lm, width) > 1e-3 * d2.abs())
            })
            .collect();
        Ok(HessianTrace {
            trace: terms.iter().map(|t| t.0).sum(),
            exact: true,
            flagged: terms.iter().filter(|t| t.1).count(),
            evaluations: 2 * theta.len() + 1,
        })
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probes: Vec<Vec<f64>> = (0..HUTCHINSON_PROBES)
            .map(|_| {
                (0..theta.len())
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        let step = h * (1.0 + theta.iter().fold(0.0_f64, |a, t| a.max(t.abs())));
        let terms: Vec<(f64, bool)> = probes
            .par_iter()
            .map(|v| {
                let plus: Vec<f64> = theta.iter().zip(v).map(|(t, s)| t + step * s).collect();
                let minus: Vec<f64> = theta.iter().zip(v).map(|(t, s)| t - step * s).collect();
                let (lp, lm) = (loss_at(&plus), loss_at(&minus));
                let q = (lp - 2.0 * l0 + lm) / (step * step);
                (q, noise(lp, lm, step) > 1e-3 * q.abs())
            })
            .collect();
        Ok(HessianTrace {
            trace: terms.iter().map(|t| t.0).sum::<f64>() / HUTCHINSON_PROBES as f64,
            exact: false,
            flagged: terms.iter().filter(|t| t.1).count(),
            evaluations: 2 * HUTCHINSON_PROBES + 1,
        })
    }
}

/// `Σ_j ∂²f(x)/∂θ_j²` (one entry per output) by second differences in each
/// parameter.
pub fn fd_param_laplacian(net: &Network, x: &[f64], h: f64) -> Vec<f64> {
    let theta = net.params();
    let f0 = reference_forward(net, x, None);
    let rows: Vec<Vec<f64>> = (0..theta.len())
        .into_par_iter()
        .map(|j| {
            let step = h * (1.0 + theta[j].abs());
            let mut probe = net.clone();
            let mut p = theta.clone();
            p[j] = theta[j] + step;
            probe.set_params(&p).expect("parameter length");
            let fp = reference_forward(&probe, x, None);
            p[j] = theta[j] - step;
            probe.set_params(&p).expect("parameter length");
            let fm = reference_forward(&probe, x, None);
            let width = 0.5 * ((theta[j] + step) - (theta[j] - step));
            (0..f0.len())
                .map(|k| (fp[k] - 2.0 * f0[k] + fm[k]) / (width * width))
                .collect()
        })
        .collect();
    (0..f0.len()).map(|k| rows.iter().map(|r| r[k]).sum()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√n`.
    pub stderr: f64,
    pub n: usize,
    /// Draws whose statistic was non-finite.
    pub discarded: usize,
}

/// Monte-Carlo mean of `statistic(sampler(rng))`, deterministic per seed.
pub fn mc_expectation<S>(
    mut sampler: impl FnMut(&mut ChaCha8Rng) -> S,
    mut statistic: impl FnMut(&S) -> f64,
    n_draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_draws < 2 {
        return Err(Error::config("n_draws", "Monte-Carlo needs at least 2 draws"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Welford accumulation.
    let (mut n, mut mean, mut m2, mut discarded) = (0usize, 0.0, 0.0, 0usize);
    for _ in 0..n_draws {
        let v = statistic(&sampler(&mut rng));
        if !v.is_finite() {
            discarded += 1;
            continue;
        }
        n += 1;
        let d = v - mean;
        mean += d / n as f64;
        m2 += d * (v - mean);
    }
    if n < 2 {
        return Err(Error::Insufficient(format!("only {n} finite Monte-Carlo draws")));
    }
    Ok(McEstimate {
        mean,
        stderr: (m2 / (n - 1) as f64).sqrt() / (n as f64).sqrt(),
        n,
        discarded,
    })
}

/// Determinant by LU with partial pivoting.
pub fn determinant(a: &Matrix) -> f64 {
    assert_eq!(a.rows(), a.cols(), "determinant of a non-square matrix");
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut det = 1.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))
            .expect("non-empty");
        if m[p][k] == 0.0 {
            return 0.0;
        }
        if p != k {
            m.swap(p, k);
            det = -det;
        }
        det *= m[k][k];
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for c in k..n {
                m[i][c] -= f * m[k][c];
            }
        }
    }
    det
}

/// `½ ln det(J Jᵀ)` on the smaller Gram side.
pub fn half_log_det_gram(j: &Matrix) -> f64 {
    let g = if j.rows() <= j.cols() {
        j.matmul(&j.transpose())
    } else {
        j.transpose().matmul(j)
    }
    .expect("gram shape");
    0.5 * determinant(&g).ln()
}

/// Eigenvalues of a symmetric matrix as roots of `det(A − λI)`, located by a
/// sign-change scan over the Gershgorin interval followed by bisection.
/// Only suitable for small matrices with well-separated eigenvalues.
pub fn char_poly_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let radius = (0..n)
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        + 1.0;
    let p = |lam: f64| {
        let mut s = a.clone();
        for i in 0..n {
            s.set(i, i, a.get(i, i) - lam);
        }
        determinant(&s)
    };
    let grid = 20_000;
    let mut roots = Vec::new();
    let mut lo = -radius;
    let mut plo = p(lo);
    for k in 1..=grid {
        let hi = -radius + 2.0 * radius * k as f64 / grid as f64;
        let phi = p(hi);
        if plo == 0.0 {
            roots.push(lo);
        } else if plo.signum() != phi.signum() && phi != 0.0 {
            let (mut a_, mut b_, mut pa) = (lo, hi, plo);
            for _ in 0..200 {
                let mid = 0.5 * (a_ + b_);
                let pm = p(mid);
                if pm == 0.0 {
                    a_ = mid;
                    b_ = mid;
                    break;
                }
                if pm.signum() == pa.signum() {
                    a_ = mid;
                    pa = pm;
                } else {
                    b_ = mid;
                }
            }
            roots.push(0.5 * (a_ + b_));
        }
        lo = hi;
        plo = phi;
    }
    roots.sort_by(|x, y| y.total_cmp(x));
    roots
}

/// Pearson correlation from the covariance formula (two passes).
pub fn pearson_two_pass(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0);
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / (n - 1.0);
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / (n - 1.0);
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{jacobians, Activation};
    use rand_distr::{Distribution, StandardNormal};

    fn tanh_mlp(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_m =
            |r: usize, c: usize| Matrix::new(r, c, (0..r * c).map(|_| rng.random_range(-0.8..0.8)).collect()).unwrap();
        let w1 = rand_m(5, 4);
        let w2 = rand_m(2, 5);
        Network::new(
            vec![
                Layer::dense(w1, Some(vec![0.1, -0.2, 0.3, 0.0, 0.05])),
                Layer::activation(Activation::Tanh),
                Layer::dense(w2, Some(vec![0.2, -0.1])),
            ],
            4,
        )
        .unwrap()
    }

    #[test]
    fn param_laplacian_of_two_layer_linear_chain() {
        // f = a·b·x: ∂²f/∂a² = ∂²f/∂b² = 0.
        let net = Network::new(
            vec![
                Layer::dense(Matrix::new(1, 1, vec![0.7]).unwrap(), None),
                Layer::dense(Matrix::new(1, 1, vec![-1.3]).unwrap(), None),
            ],
            1,
        )
        .unwrap();
        assert!(fd_param_laplacian(&net, &[2.0], 1e-4)[0].abs() < 1e-6);
        // f = tanh(w x): ∂²f/∂w² = −2 tanh(wx) sech²(wx) x².
        let net = Network::new(
            vec![
                Layer::dense(Matrix::new(1, 1, vec![0.4]).unwrap(), None),
                Layer::activation(Activation::Tanh),
            ],
            1,
        )
        .unwrap();
        let (w, x) = (0.4f64, 1.5f64);
        let t = (w * x).tanh();
        let exact = -2.0 * t * (1.0 - t * t) * x * x;
        assert!((fd_param_laplacian(&net, &[x], 1e-4)[0] - exact).abs() < 1e-6);
    }

    #[test]
    fn fd_jacobian_of_linear_net_is_weight() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0, -1.0], vec![0.5, 0.0, 3.0]]).unwrap();
        let net = Network::new(vec![Layer::dense(w.clone(), None)], 3).unwrap();
        let j = fd_jacobian(&net, &[0.3, -2.0, 1.0], JACOBIAN_STEP);
        assert!(j.sub(&w).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn fd_jacobian_matches_reverse_mode() {
        let net = tanh_mlp(3);
        let x = [0.4, -1.0, 0.7, 0.2];
        let a = jacobians(&net, &x).unwrap();
        let r = OracleReport::compare(
            "j_input",
            a.j_input.data(),
            fd_jacobian(&net, &x, JACOBIAN_STEP).data(),
            1e-6,
            1e-8,
        );
        assert!(r.pass, "{r:?}");
        let r = OracleReport::compare(
            "j_layer2",
            a.j_layer[1].data(),
            fd_layer_jacobian(&net, &x, 1, JACOBIAN_STEP).data(),
            1e-6,
            1e-8,
        );
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn fd_jacobian_second_order_convergence() {
        let net = tanh_mlp(5);
        let x = [0.4, -1.0, 0.7, 0.2];
        let exact = jacobians(&net, &x).unwrap().j_input;
        let err = |h: f64| fd_jacobian(&net, &x, h).sub(&exact).unwrap().max_abs();
        let ratio = err(2e-3) / err(1e-3);
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn hessian_trace_of_linear_least_squares() {
        // L = (1/2n) Σ ‖W x_i − y_i‖² has trace N·(1/n)Σ‖x_i‖².
        let w = Matrix::from_rows(&[vec![0.3, -0.2], vec![1.0, 0.5], vec![0.0, 0.1]]).unwrap();
        let net = Network::new(vec![Layer::dense(w, None)], 2).unwrap();
        let xs = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.5]]).unwrap();
        let ys = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let t = fd_hessian_trace(&net, &xs, &ys, &[0, 1], HESSIAN_STEP, 0).unwrap();
        let expected = 3.0 * (5.0 + 0.5) / 2.0;
        assert!((t.trace - expected).abs() < 1e-6 * expected, "{t:?}");
        assert!(t.exact);
    }

    #[test]
    fn mc_constant_and_normal() {
        let c = mc_expectation(|_| 3.0, |v| *v, 10, 1).unwrap();
        assert_eq!((c.mean, c.stderr), (3.0, 0.0));
        let z = mc_expectation(|r| StandardNormal.sample(r), |v: &f64| *v, 100_000, 2).unwrap();
        assert!(z.mean.abs() <= 4.0 * z.stderr, "{z:?}");
        assert!(mc_expectation(|_| 1.0, |v| *v, 1, 0).is_err());
    }

    #[test]
    fn mc_discards_non_finite() {
        let mut k = 0;
        let e = mc_expectation(
            |_| {
                k += 1;
                k
            },
            |v| if v % 2 == 0 { f64::NAN } else { 1.0 },
            10,
            0,
        )
        .unwrap();
        assert_eq!((e.n, e.discarded), (5, 5));
    }

    #[test]
    fn determinant_and_char_poly() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        assert!((determinant(&a) - 5.0).abs() < 1e-14);
        let ev = char_poly_eigenvalues(&a);
        let disc = 5.0_f64.sqrt();
        assert!((ev[0] - (5.0 + disc) / 2.0).abs() < 1e-9 && (ev[1] - (5.0 - disc) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn pearson_oracle_extremes() {
        assert!((pearson_two_pass(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert!((pearson_two_pass(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    }
}
