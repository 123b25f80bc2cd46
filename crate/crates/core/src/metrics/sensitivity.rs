use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, svd};
use crate::net::JacobianBundle;
use crate::report::BoundReport;

use super::probe::Probe;

fn nonempty(bundles: &[JacobianBundle], what: &str) -> Result<f64> {
    if bundles.is_empty() {
        Err(Error::EmptySamples(what.into()))
    } else {
        Ok(bundles.len() as f64)
    }
}

/// `(1/n) Σ ‖∇_θ f(x_i)‖_F²`
pub fn sharpness_approx(bundles: &[JacobianBundle]) -> Result<f64> {
    let n = nonempty(bundles, "sharpness_approx")?;
    Ok(bundles.iter().map(|b| b.param_grad_sq_fro).sum::<f64>() / n)
}

/// Mean largest singular value of the input Jacobian.
pub fn mls(bundles: &[JacobianBundle]) -> Result<f64> {
    let n = nonempty(bundles, "mls")?;
    let mut total = 0.0;
    for b in bundles {
        total += svd(&b.j_input)?.largest();
    }
    Ok(total / n)
}

fn mean_inv_sq_input(probe: &Probe) -> f64 {
    probe.bundles.iter().map(|b| b.input_norm().powi(-2)).sum::<f64>() / probe.n() as f64
}

/// `‖W‖₂ · √((1/n) Σ 1/‖x_i‖²) · √S`
pub fn mls_bound(probe: &Probe, s: f64) -> Result<f64> {
    probe.require_first_linear("mls_bound")?;
    Ok(probe.weight_norms[0] * mean_inv_sq_input(probe).sqrt() * s.sqrt())
}

/// `(1/n) Σ_i Σ_l ‖j_layer[l]_i‖₂`
pub fn nmls(bundles: &[JacobianBundle]) -> Result<f64> {
    let n = nonempty(bundles, "nmls")?;
    let mut total = 0.0;
    for b in bundles {
        for j in &b.j_layer {
            total += svd(j)?.largest();
        }
    }
    Ok(total / n)
}

/// `√((1/n) Σ_i Σ_l ‖W_l‖²/‖x_i^l‖²) · √S`; infinite when some `x_i^l = 0`.
pub fn nmls_bound(probe: &Probe, s: f64) -> Result<f64> {
    let mut acc = 0.0;
    for b in &probe.bundles {
        for (l, w) in probe.weight_norms.iter().enumerate() {
            acc += w * w / norm2(&b.layer_inputs[l]).powi(2);
        }
    }
    Ok((acc / probe.n() as f64).sqrt() * s.sqrt())
}

/// Counts `(sample, layer)` pairs whose layer input is exactly zero.
pub fn zero_layer_inputs(probe: &Probe) -> usize {
    probe
        .bundles
        .iter()
        .map(|b| b.layer_inputs.iter().filter(|x| norm2(x) == 0.0).count())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainAbcd {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl ChainAbcd {
    pub fn reports(&self) -> Vec<BoundReport> {
        vec![
            BoundReport::upper("chain_a_le_b", self.a, self.b),
            BoundReport::upper("chain_b_le_c", self.b, self.c),
            BoundReport::upper("chain_c_le_d", self.c, self.d),
        ]
    }
}

/// The three relaxations between MLS and its sharpness bound.
pub fn chain_abcd(probe: &Probe) -> Result<ChainAbcd> {
    probe.require_first_linear("chain_abcd")?;
    let n = probe.n() as f64;
    let w = probe.weight_norms[0];
    let s = sharpness_approx(&probe.bundles)?;
    let b = w / n
        * probe
            .bundles
            .iter()
            .map(|b| b.per_layer_weight_grad_sq_fro[0].sqrt() / b.input_norm())
            .sum::<f64>();
    let mean_gw = probe
        .bundles
        .iter()
        .map(|b| b.per_layer_weight_grad_sq_fro[0])
        .sum::<f64>()
        / n;
    let c = w * mean_inv_sq_input(probe).sqrt() * mean_gw.sqrt();
    Ok(ChainAbcd {
        a: mls(&probe.bundles)?,
        b,
        c,
        d: mls_bound(probe, s)?,
    })
}

/// Values of the four terms of the k-th power norm chain:
/// `mean ‖∇_x f‖₂^k ≤ mean ‖∇_x f‖_F^k ≤ (‖W‖/min‖x‖)^k mean ‖∇_W f‖_F^k
/// ≤ (‖W‖/min‖x‖)^k mean ‖∇_θ f‖_F^k`.
pub fn k_norm_terms(probe: &Probe, k: f64) -> Result<[f64; 4]> {
    probe.require_first_linear("k_norm_chain")?;
    if !(k > 0.0) {
        return Err(Error::config("k", "must be positive"));
    }
    let n = probe.n() as f64;
    let min_x = probe
        .bundles
        .iter()
        .map(|b| b.input_norm())
        .fold(f64::INFINITY, f64::min);
    let scale = (probe.weight_norms[0] / min_x).powf(k);
    let mut t = [0.0; 4];
    for b in &probe.bundles {
        t[0] += svd(&b.j_input)?.largest().powf(k);
        t[1] += b.j_input.frobenius_norm().powf(k);
        t[2] += b.per_layer_weight_grad_sq_fro[0].sqrt().powf(k);
        t[3] += b.param_grad_sq_fro.sqrt().powf(k);
    }
    Ok([t[0] / n, t[1] / n, scale * t[2] / n, scale * t[3] / n])
}

pub fn k_norm_chain(probe: &Probe, k: f64) -> Result<Vec<BoundReport>> {
    let t = k_norm_terms(probe, k)?;
    Ok((0..3)
        .map(|i| BoundReport::upper(format!("k_norm_k{k}_link{}", i + 1), t[i], t[i + 1]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixNormalized {
    pub lhs: f64,
    pub rhs: f64,
    /// `(sample, layer)` pairs excluded because `x_i^l = 0`.
    pub excluded: usize,
}

/// `Σ_l x̄^l·mls^l ≤ Σ_l ‖W_l‖₂ √((1/n) Σ_i ‖∇_{W_l} f_i‖_F²)`, per layer over
/// the samples with nonzero layer input.
pub fn matrix_normalized_sharpness(probe: &Probe) -> Result<MatrixNormalized> {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut excluded = 0;
    for (l, &w) in probe.weight_norms.iter().enumerate() {
        let (mut n, mut inv_sq, mut sens, mut grad_sq) = (0usize, 0.0, 0.0, 0.0);
        for b in &probe.bundles {
            let xn = norm2(&b.layer_inputs[l]);
            if xn == 0.0 {
                excluded += 1;
                continue;
            }
            n += 1;
            inv_sq += xn.powi(-2);
            sens += svd(&b.j_layer[l])?.largest();
            grad_sq += b.per_layer_weight_grad_sq_fro[l];
        }
        if n == 0 {
            continue;
        }
        let n = n as f64;
        lhs += (inv_sq / n).powf(-0.5) * sens / n;
        rhs += w * (grad_sq / n).sqrt();
    }
    Ok(MatrixNormalized { lhs, rhs, excluded })
}

/// Telescoped residual bound:
/// `mean ‖∇_x g‖₂ − ‖W_L‖₂ ≤ mean Σ_{l<L} (‖W_l‖₂/‖x^l‖₂)‖∇_{W_l} g‖_F`.
pub fn residual_bound_check(probe: &Probe) -> Result<BoundReport> {
    if !probe.has_residual {
        return Err(Error::Structure(
            "residual bound needs at least one residual block".into(),
        ));
    }
    if !probe.residual_well_formed {
        return Err(Error::Structure(
            "residual bound needs every block to open with a linear layer".into(),
        ));
    }
    if !probe.last_is_linear {
        return Err(Error::Structure("residual bound needs a linear last layer".into()));
    }
    let n = probe.n() as f64;
    let last = probe.n_linear() - 1;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for b in &probe.bundles {
        lhs += svd(&b.j_input)?.largest();
        for l in 0..last {
            rhs += probe.weight_norms[l] / norm2(&b.layer_inputs[l]) * b.per_layer_weight_grad_sq_fro[l].sqrt();
        }
    }
    Ok(BoundReport::upper(
        "residual_bound",
        lhs / n - probe.weight_norms[last],
        rhs / n,
    ))
}
