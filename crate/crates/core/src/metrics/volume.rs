use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_pseudo_det_gram, norm2};
use crate::net::JacobianBundle;
use crate::report::BoundReport;

use super::probe::Probe;
use super::sensitivity::sharpness_approx;

/// `ln Σ exp(v)`, exact for `−∞` entries.
pub(crate) fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LvrStats {
    /// Mean of `ln dvol_i`.
    pub log_lvr_mean: f64,
    /// `ln((1/n) Σ dvol_i)`.
    pub lvr_mean_log: f64,
    /// Samples whose volume underflowed to the `−∞` sentinel.
    pub underflow: usize,
}

pub fn lvr_stats(bundles: &[JacobianBundle]) -> Result<LvrStats> {
    if bundles.is_empty() {
        return Err(Error::EmptySamples("lvr_stats".into()));
    }
    let logs = bundles
        .iter()
        .map(|b| log_pseudo_det_gram(&b.j_input))
        .collect::<Result<Vec<_>>>()?;
    Ok(stats_from_logs(&logs))
}

fn stats_from_logs(logs: &[f64]) -> LvrStats {
    let n = logs.len() as f64;
    LvrStats {
        log_lvr_mean: logs.iter().sum::<f64>() / n,
        lvr_mean_log: log_sum_exp(logs.iter().copied()) - n.ln(),
        underflow: logs.iter().filter(|v| **v == f64::NEG_INFINITY).count(),
    }
}

/// Exponent used by the volume bounds for an `N × d` Jacobian: the number of
/// singular values in the pseudo-determinant.
fn volume_rank(n_out: usize, d: usize) -> usize {
    n_out.min(d)
}

/// `ln[(1/n)·√(Σ_i (w/‖x_i‖)^{2r}) · (nS/r)^{r/2}]`
fn volume_bound_log(ratios_log: &[f64], n: usize, s: f64, r: usize) -> f64 {
    let r = r as f64;
    let n_f = n as f64;
    if s <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -n_f.ln() + 0.5 * log_sum_exp(ratios_log.iter().map(|q| 2.0 * r * q)) + 0.5 * r * (n_f * s / r).ln()
}

fn log_ratio(w: f64, x_norm: f64) -> f64 {
    w.ln() - x_norm.ln()
}

/// Log of the volume bound on the mean local volumetric ratio at the input.
pub fn lvr_bound_log(probe: &Probe, s: f64) -> Result<f64> {
    probe.require_first_linear("lvr_bound")?;
    let r = volume_rank(probe.output_dim, probe.input_dim);
    let ratios: Vec<f64> = probe
        .bundles
        .iter()
        .map(|b| log_ratio(probe.weight_norms[0], b.input_norm()))
        .collect();
    Ok(volume_bound_log(&ratios, probe.n(), s, r))
}

/// Log of `(r^{-r/2}/n) Σ ‖J_i‖_F^r`, the intermediate AM-GM quantity.
pub fn lvr_amgm_log(bundles: &[JacobianBundle]) -> Result<f64> {
    if bundles.is_empty() {
        return Err(Error::EmptySamples("lvr_amgm".into()));
    }
    let j = &bundles[0].j_input;
    let r = volume_rank(j.rows(), j.cols()) as f64;
    let n = bundles.len() as f64;
    Ok(-0.5 * r * r.ln() - n.ln() + log_sum_exp(bundles.iter().map(|b| r * b.j_input.frobenius_norm().ln())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvrStats {
    /// `ln Σ_l (1/n) Σ_i dvol(j_layer[l]_i)`
    pub nvr_log: f64,
    pub per_layer_log: Vec<f64>,
    pub underflow: usize,
}

pub fn nvr_stats(bundles: &[JacobianBundle]) -> Result<NvrStats> {
    if bundles.is_empty() {
        return Err(Error::EmptySamples("nvr_stats".into()));
    }
    let n_layers = bundles[0].j_layer.len();
    let mut per_layer_log = Vec::with_capacity(n_layers);
    let mut underflow = 0;
    for l in 0..n_layers {
        let logs = bundles
            .iter()
            .map(|b| log_pseudo_det_gram(&b.j_layer[l]))
            .collect::<Result<Vec<_>>>()?;
        let st = stats_from_logs(&logs);
        underflow += st.underflow;
        per_layer_log.push(st.lvr_mean_log);
    }
    Ok(NvrStats {
        nvr_log: log_sum_exp(per_layer_log.iter().copied()),
        per_layer_log,
        underflow,
    })
}

/// Log of the volume bound on the network volumetric ratio. Layers are grouped
/// by Jacobian rank and each group gets its own bound; with a single group this
/// is the usual closed form.
pub fn nvr_bound_log(probe: &Probe, s: f64) -> Result<f64> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (l, &w) in probe.weight_norms.iter().enumerate() {
        for b in &probe.bundles {
            let r = volume_rank(probe.output_dim, b.layer_inputs[l].len());
            groups
                .entry(r)
                .or_default()
                .push(log_ratio(w, norm2(&b.layer_inputs[l])));
        }
    }
    Ok(log_sum_exp(
        groups
            .iter()
            .map(|(&r, ratios)| volume_bound_log(ratios, probe.n(), s, r)),
    ))
}

/// The volume inequalities: AM-GM step and both sharpness bounds.
pub fn volume_reports(probe: &Probe) -> Result<Vec<BoundReport>> {
    let s = sharpness_approx(&probe.bundles)?;
    let lvr = lvr_stats(&probe.bundles)?;
    let mut out = vec![BoundReport::upper_log(
        "lvr_amgm",
        lvr.lvr_mean_log,
        lvr_amgm_log(&probe.bundles)?,
    )];
    if probe.first_is_linear {
        out.push(BoundReport::upper_log(
            "lvr_bound",
            lvr.lvr_mean_log,
            lvr_bound_log(probe, s)?,
        ));
    }
    out.push(BoundReport::upper_log(
        "nvr_bound",
        nvr_stats(&probe.bundles)?.nvr_log,
        nvr_bound_log(probe, s)?,
    ));
    Ok(out)
}
