use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{norm2, svd};
use crate::net::{JacobianBundle, Network};
use crate::oracles::mc_expectation;
use crate::report::BoundReport;

use super::probe::{Probe, SampleSet};
use super::sample_loss;

pub const DEFAULT_RHO: f64 = 0.1;
pub const ASCENT_RESTARTS: usize = 3;
pub const ASCENT_STEPS: usize = 100;
pub const ASCENT_RADIUS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSharpness {
    /// Monte-Carlo estimate at the given `ρ`.
    pub estimate: f64,
    pub stderr: f64,
    /// `(1/n) Σ_i Σ_j θ_j² ‖∂f_i/∂θ_j‖²`, the `ρ → 0` limit at interpolation.
    pub analytic: f64,
    pub discarded: usize,
}

/// `(1/n) Σ_i Σ_j θ_j² ‖∂f_i/∂θ_j‖²`
pub fn adaptive_sharpness_analytic(bundles: &[JacobianBundle]) -> Result<f64> {
    if bundles.is_empty() {
        return Err(Error::EmptySamples("adaptive_sharpness".into()));
    }
    Ok(bundles.iter().map(|b| b.param_grad_weighted_sq).sum::<f64>() / bundles.len() as f64)
}

/// `(2/ρ²)·E[L(θ+δ) − L(θ)]` with `δ ~ N(0, ρ² diag(θ²))`. Draws are
/// antithetic pairs `±δ`, which leaves the expectation unchanged and cancels
/// the first-order term.
pub fn adaptive_sharpness_estimate(
    net: &Network,
    ds: &Dataset,
    samples: &SampleSet,
    bundles: &[JacobianBundle],
    rho: f64,
    n_draws: usize,
    seed: u64,
) -> Result<AdaptiveSharpness> {
    if !(rho > 0.0) {
        return Err(Error::config("rho", "must be positive"));
    }
    if n_draws == 0 {
        return Err(Error::config("mc_draws", "must be at least 1"));
    }
    let theta = net.params();
    let base = sample_loss(net, ds, &samples.indices)?;
    let loss_at = |p: &[f64]| -> f64 {
        let mut probe = net.clone();
        if probe.set_params(p).is_err() {
            return f64::NAN;
        }
        sample_loss(&probe, ds, &samples.indices).unwrap_or(f64::NAN)
    };
    let est = mc_expectation(
        |rng| {
            theta
                .iter()
                .map(|t| {
                    let z: f64 = StandardNormal.sample(rng);
                    rho * t.abs() * z
                })
                .collect::<Vec<f64>>()
        },
        |delta| {
            let plus: Vec<f64> = theta.iter().zip(delta).map(|(t, d)| t + d).collect();
            let minus: Vec<f64> = theta.iter().zip(delta).map(|(t, d)| t - d).collect();
            (loss_at(&plus) + loss_at(&minus) - 2.0 * base) / (rho * rho)
        },
        n_draws.max(2),
        seed,
    )?;
    Ok(AdaptiveSharpness {
        estimate: est.mean,
        stderr: est.stderr,
        analytic: adaptive_sharpness_analytic(bundles)?,
        discarded: est.discarded,
    })
}

/// `(1/n) Σ_i Σ_p ‖∂f/∂x_p‖² x_p²`
pub fn input_invariant_mls(bundles: &[JacobianBundle]) -> Result<f64> {
    if bundles.is_empty() {
        return Err(Error::EmptySamples("input_invariant_mls".into()));
    }
    let mut total = 0.0;
    for b in bundles {
        let j = &b.j_input;
        for (p, xp) in b.x.iter().enumerate() {
            let col_sq: f64 = (0..j.rows()).map(|r| j.get(r, p).powi(2)).sum();
            total += col_sq * xp * xp;
        }
    }
    Ok(total / bundles.len() as f64)
}

/// `d · adaptive ≥ input-invariant MLS`, `d` the first layer's output width.
pub fn adaptive_bound_report(probe: &Probe) -> Result<BoundReport> {
    probe.require_first_linear("adaptive vs input-invariant bound")?;
    let d = probe.first_layer_out as f64;
    Ok(BoundReport::upper(
        "adaptive_vs_input_invariant",
        input_invariant_mls(&probe.bundles)?,
        d * adaptive_sharpness_analytic(&probe.bundles)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizedMode {
    /// `σ_max` from the SVD of the input Jacobian.
    Exact,
    /// Perturbation search around each input.
    Ascent,
}

/// `(1/n) Σ ‖x_i‖² ‖∇_x f(x_i)‖₂²`.
///
/// Ascent mode searches for the direction maximizing `‖f(x+δ) − f(x)‖/‖δ‖`
/// on the sphere `‖δ‖ = 1e-3‖x‖`, stepping along the reverse-mode gradient of
/// that ratio, and reports the Jacobian gain along the best direction found.
pub fn normalized_mls(net: &Network, probe: &Probe, mode: NormalizedMode, seed: u64) -> Result<f64> {
    if probe.bundles.is_empty() {
        return Err(Error::EmptySamples("normalized_mls".into()));
    }
    let mut total = 0.0;
    for (i, b) in probe.bundles.iter().enumerate() {
        let gain_sq = match mode {
            NormalizedMode::Exact => svd(&b.j_input)?.largest().powi(2),
            NormalizedMode::Ascent => ascent_gain_sq(net, b, seed.wrapping_add(i as u64))?,
        };
        total += b.input_norm().powi(2) * gain_sq;
    }
    Ok(total / probe.n() as f64)
}

fn ascent_gain_sq(net: &Network, b: &JacobianBundle, seed: u64) -> Result<f64> {
    let x = &b.x;
    let radius = ASCENT_RADIUS * norm2(x).max(f64::MIN_POSITIVE);
    let fx = net.predict(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..ASCENT_RESTARTS {
        let mut u: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
        if !normalize(&mut u) {
            continue;
        }
        for _ in 0..ASCENT_STEPS {
            let xd: Vec<f64> = x.iter().zip(&u).map(|(a, d)| a + radius * d).collect();
            let trace = net.forward(&xd)?;
            let diff: Vec<f64> = trace.output.iter().zip(&fx).map(|(a, c)| a - c).collect();
            let mut g = net.backward(&trace, &diff)?.input;
            if !normalize(&mut g) {
                break;
            }
            u = g;
        }
        best = best.max(norm2(&b.j_input.matvec(&u)).powi(2));
    }
    Ok(best)
}

fn normalize(v: &mut [f64]) -> bool {
    let n = norm2(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}
