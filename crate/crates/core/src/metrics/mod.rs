//! Sharpness, compression metrics and their bounds.

mod adaptive;
mod dimension;
mod probe;
mod record;
mod sensitivity;
mod volume;

pub use adaptive::{
    adaptive_bound_report, adaptive_sharpness_analytic, adaptive_sharpness_estimate, input_invariant_mls,
    normalized_mls, AdaptiveSharpness, NormalizedMode, ASCENT_RADIUS, ASCENT_RESTARTS, ASCENT_STEPS, DEFAULT_RHO,
};
pub use dimension::{local_dimensionality, participation_ratio, LocalDim};
pub use probe::{Probe, SampleSet, Selector};
pub use record::{
    evaluate, inequality_reports, EvalConfig, Evaluation, MetricRecord, DEFAULT_INTERP_EPS, DEFAULT_SAMPLE_BUDGET,
};
pub use sensitivity::{
    chain_abcd, k_norm_chain, k_norm_terms, matrix_normalized_sharpness, mls, mls_bound, nmls, nmls_bound,
    residual_bound_check, sharpness_approx, zero_layer_inputs, ChainAbcd, MatrixNormalized,
};
pub use volume::{
    lvr_amgm_log, lvr_bound_log, lvr_stats, nvr_bound_log, nvr_stats, volume_reports, LvrStats, NvrStats,
};

use rayon::prelude::*;

use crate::data::{argmax, Dataset};
use crate::error::{Error, Result};
use crate::net::Network;

/// `(1/n) Σ ½‖f(x_i) − y_i‖²` over the given rows.
pub fn sample_loss(net: &Network, ds: &Dataset, rows: &[usize]) -> Result<f64> {
    Ok(loss_and_accuracy(net, ds, rows)?.0)
}

/// Loss and argmax accuracy over the given rows.
pub fn loss_and_accuracy(net: &Network, ds: &Dataset, rows: &[usize]) -> Result<(f64, f64)> {
    if rows.is_empty() {
        return Err(Error::EmptySamples("loss over no rows".into()));
    }
    let per: Vec<(f64, bool)> = rows
        .par_iter()
        .map(|&i| {
            let out = net.predict(ds.x(i))?;
            let sq: f64 = out.iter().zip(ds.y(i)).map(|(a, b)| (a - b).powi(2)).sum();
            Ok((0.5 * sq, argmax(&out) == ds.label(i)))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let acc = per.iter().filter(|p| p.1).count() as f64 / n;
    Ok((loss, acc))
}

#[cfg(test)]
mod tests;
