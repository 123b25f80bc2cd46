use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::net::{weight_gradient_identity_check, Network};
use crate::oracles::{fd_hessian_trace, HESSIAN_STEP};
use crate::report::BoundReport;

use super::adaptive::{
    adaptive_bound_report, adaptive_sharpness_estimate, input_invariant_mls, normalized_mls, NormalizedMode,
    DEFAULT_RHO,
};
use super::dimension::local_dimensionality;
use super::loss_and_accuracy;
use super::probe::{Probe, SampleSet};
use super::sensitivity::{
    chain_abcd, k_norm_chain, matrix_normalized_sharpness, mls, mls_bound, nmls, nmls_bound, residual_bound_check,
    sharpness_approx, zero_layer_inputs,
};
use super::volume::{lvr_bound_log, lvr_stats, nvr_bound_log, nvr_stats, volume_reports};

pub const DEFAULT_INTERP_EPS: f64 = 1e-4;
pub const DEFAULT_SAMPLE_BUDGET: usize = 100;

/// One checkpoint's scalar metrics. Quantities that do not apply to the
/// architecture (or to an empty split) are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    #[serde(with = "nonfinite")]
    pub train_loss: f64,
    #[serde(with = "nonfinite")]
    pub test_loss: f64,
    #[serde(with = "nonfinite")]
    pub sharpness_approx: f64,
    pub hessian_trace: Option<f64>,
    #[serde(with = "nonfinite")]
    pub log_lvr_mean: f64,
    #[serde(with = "nonfinite")]
    pub lvr_mean_log: f64,
    #[serde(with = "nonfinite")]
    pub nvr_log: f64,
    #[serde(with = "nonfinite")]
    pub mls: f64,
    #[serde(with = "nonfinite")]
    pub nmls: f64,
    #[serde(with = "nonfinite")]
    pub local_dim: f64,
    #[serde(with = "nonfinite")]
    pub mls_bound: f64,
    #[serde(with = "nonfinite")]
    pub nmls_bound: f64,
    #[serde(with = "nonfinite")]
    pub lvr_bound_log: f64,
    #[serde(with = "nonfinite")]
    pub nvr_bound_log: f64,
    #[serde(with = "nonfinite")]
    pub chain_a: f64,
    #[serde(with = "nonfinite")]
    pub chain_b: f64,
    #[serde(with = "nonfinite")]
    pub chain_c: f64,
    #[serde(with = "nonfinite")]
    pub chain_d: f64,
    #[serde(with = "nonfinite")]
    pub adaptive_sharpness: f64,
    #[serde(with = "nonfinite")]
    pub normalized_mls: f64,
    #[serde(with = "nonfinite")]
    pub input_invariant_mls: f64,
    #[serde(with = "nonfinite")]
    pub matrix_normalized_sharpness: f64,
    #[serde(with = "nonfinite")]
    pub gen_gap_loss: f64,
    #[serde(with = "nonfinite")]
    pub gen_gap_acc: f64,
    pub interpolation_flag: bool,
    /// Loss over the metric sample set.
    #[serde(with = "nonfinite")]
    pub sample_loss: f64,
    #[serde(with = "nonfinite")]
    pub train_acc: f64,
    #[serde(with = "nonfinite")]
    pub test_acc: f64,
    #[serde(with = "nonfinite")]
    pub adaptive_sharpness_analytic: f64,
    #[serde(with = "nonfinite")]
    pub matrix_normalized_lhs: f64,
    pub n_samples: usize,
    pub zero_norm_excluded: usize,
    pub zero_layer_inputs: usize,
    pub local_dim_missing: usize,
    pub lvr_underflow: usize,
    pub output_exceeds_input: bool,
}

/// JSON has no NaN or infinity; those are written as the strings
/// `"NaN"`, `"inf"` and `"-inf"`.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
        Null(()),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Null(()) => Ok(f64::NAN),
            Repr::Text(t) => match t.as_str() {
                "NaN" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

impl MetricRecord {
    pub const FIELDS: [&'static str; 37] = [
        "step",
        "train_loss",
        "test_loss",
        "sharpness_approx",
        "hessian_trace",
        "log_lvr_mean",
        "lvr_mean_log",
        "nvr_log",
        "mls",
        "nmls",
        "local_dim",
        "mls_bound",
        "nmls_bound",
        "lvr_bound_log",
        "nvr_bound_log",
        "chain_A",
        "chain_B",
        "chain_C",
        "chain_D",
        "adaptive_sharpness",
        "normalized_mls",
        "input_invariant_mls",
        "matrix_normalized_sharpness",
        "gen_gap_loss",
        "gen_gap_acc",
        "interpolation_flag",
        "sample_loss",
        "train_acc",
        "test_acc",
        "adaptive_sharpness_analytic",
        "matrix_normalized_lhs",
        "n_samples",
        "zero_norm_excluded",
        "zero_layer_inputs",
        "local_dim_missing",
        "lvr_underflow",
        "output_exceeds_input",
    ];

    /// Values in [`Self::FIELDS`] order; floats use shortest round-trip text.
    pub fn values(&self) -> Vec<String> {
        let f = |v: f64| v.to_string();
        vec![
            self.step.to_string(),
            f(self.train_loss),
            f(self.test_loss),
            f(self.sharpness_approx),
            self.hessian_trace.map_or(String::new(), f),
            f(self.log_lvr_mean),
            f(self.lvr_mean_log),
            f(self.nvr_log),
            f(self.mls),
            f(self.nmls),
            f(self.local_dim),
            f(self.mls_bound),
            f(self.nmls_bound),
            f(self.lvr_bound_log),
            f(self.nvr_bound_log),
            f(self.chain_a),
            f(self.chain_b),
            f(self.chain_c),
            f(self.chain_d),
            f(self.adaptive_sharpness),
            f(self.normalized_mls),
            f(self.input_invariant_mls),
            f(self.matrix_normalized_sharpness),
            f(self.gen_gap_loss),
            f(self.gen_gap_acc),
            self.interpolation_flag.to_string(),
            f(self.sample_loss),
            f(self.train_acc),
            f(self.test_acc),
            f(self.adaptive_sharpness_analytic),
            f(self.matrix_normalized_lhs),
            self.n_samples.to_string(),
            self.zero_norm_excluded.to_string(),
            self.zero_layer_inputs.to_string(),
            self.local_dim_missing.to_string(),
            self.lvr_underflow.to_string(),
            self.output_exceeds_input.to_string(),
        ]
    }

    /// Blank record: every float NaN, counters zero.
    pub fn empty(step: usize) -> Self {
        let nan = f64::NAN;
        Self {
            step,
            train_loss: nan,
            test_loss: nan,
            sharpness_approx: nan,
            hessian_trace: None,
            log_lvr_mean: nan,
            lvr_mean_log: nan,
            nvr_log: nan,
            mls: nan,
            nmls: nan,
            local_dim: nan,
            mls_bound: nan,
            nmls_bound: nan,
            lvr_bound_log: nan,
            nvr_bound_log: nan,
            chain_a: nan,
            chain_b: nan,
            chain_c: nan,
            chain_d: nan,
            adaptive_sharpness: nan,
            normalized_mls: nan,
            input_invariant_mls: nan,
            matrix_normalized_sharpness: nan,
            gen_gap_loss: nan,
            gen_gap_acc: nan,
            interpolation_flag: false,
            sample_loss: nan,
            train_acc: nan,
            test_acc: nan,
            adaptive_sharpness_analytic: nan,
            matrix_normalized_lhs: nan,
            n_samples: 0,
            zero_norm_excluded: 0,
            zero_layer_inputs: 0,
            local_dim_missing: 0,
            lvr_underflow: 0,
            output_exceeds_input: false,
        }
    }

    /// Re-checks the inequalities between the stored scalars. Pairs where
    /// either side is NaN (not applicable to the architecture) are skipped.
    pub fn stored_reports(&self) -> Vec<BoundReport> {
        let pairs = [
            ("stored_mls_bound", self.mls, self.mls_bound, false),
            ("stored_nmls_bound", self.nmls, self.nmls_bound, false),
            ("stored_lvr_bound", self.lvr_mean_log, self.lvr_bound_log, true),
            ("stored_nvr_bound", self.nvr_log, self.nvr_bound_log, true),
            ("stored_chain_a_le_b", self.chain_a, self.chain_b, false),
            ("stored_chain_b_le_c", self.chain_b, self.chain_c, false),
            ("stored_chain_c_le_d", self.chain_c, self.chain_d, false),
            ("stored_mls_le_chain_d", self.mls, self.chain_d, false),
            (
                "stored_matrix_normalized",
                self.matrix_normalized_lhs,
                self.matrix_normalized_sharpness,
                false,
            ),
        ];
        pairs
            .into_iter()
            .filter(|(_, l, r, _)| !l.is_nan() && !r.is_nan())
            .map(|(name, l, r, log)| {
                if log {
                    BoundReport::upper_log(name, l, r)
                } else {
                    BoundReport::upper(name, l, r)
                }
            })
            .collect()
    }

    /// Numeric value of a named column (`sharpness_sqrt` is derived).
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "sharpness_sqrt" => self.sharpness_approx.sqrt(),
            "sharpness_approx" => self.sharpness_approx,
            "train_loss" => self.train_loss,
            "test_loss" => self.test_loss,
            "log_lvr_mean" => self.log_lvr_mean,
            "lvr_mean_log" => self.lvr_mean_log,
            "nvr_log" => self.nvr_log,
            "mls" => self.mls,
            "nmls" => self.nmls,
            "local_dim" => self.local_dim,
            "mls_bound" => self.mls_bound,
            "nmls_bound" => self.nmls_bound,
            "lvr_bound_log" => self.lvr_bound_log,
            "nvr_bound_log" => self.nvr_bound_log,
            "adaptive_sharpness" => self.adaptive_sharpness,
            "normalized_mls" => self.normalized_mls,
            "input_invariant_mls" => self.input_invariant_mls,
            "matrix_normalized_sharpness" => self.matrix_normalized_sharpness,
            "gen_gap_loss" => self.gen_gap_loss,
            "gen_gap_acc" => self.gen_gap_acc,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub rho: f64,
    pub mc_draws: usize,
    pub seed: u64,
    pub normalized_mode: NormalizedMode,
    pub interp_eps: f64,
    /// Also compute the finite-difference Hessian trace (slow).
    pub hessian_oracle: bool,
    pub k_values: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            mc_draws: 64,
            seed: 0,
            normalized_mode: NormalizedMode::Exact,
            interp_eps: DEFAULT_INTERP_EPS,
            hessian_oracle: false,
            k_values: vec![1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub record: MetricRecord,
    pub reports: Vec<BoundReport>,
}

impl Evaluation {
    pub fn violations(&self) -> impl Iterator<Item = &BoundReport> {
        self.reports.iter().filter(|r| !r.holds)
    }
}

/// Every inequality that applies to the probed network.
pub fn inequality_reports(probe: &Probe, k_values: &[f64]) -> Result<Vec<BoundReport>> {
    let s = sharpness_approx(&probe.bundles)?;
    let mut out = volume_reports(probe)?;
    if probe.first_is_linear {
        out.push(BoundReport::upper(
            "mls_bound",
            mls(&probe.bundles)?,
            mls_bound(probe, s)?,
        ));
        out.extend(chain_abcd(probe)?.reports());
        for &k in k_values {
            out.extend(k_norm_chain(probe, k)?);
        }
        out.push(adaptive_bound_report(probe)?);
    }
    out.push(BoundReport::upper(
        "nmls_bound",
        nmls(&probe.bundles)?,
        nmls_bound(probe, s)?,
    ));
    let mn = matrix_normalized_sharpness(probe)?;
    out.push(BoundReport::upper("matrix_normalized", mn.lhs, mn.rhs));
    if probe.has_residual && probe.last_is_linear && probe.residual_well_formed {
        out.push(residual_bound_check(probe)?);
    }
    Ok(out)
}

/// Computes the full record and every bound report for one checkpoint.
pub fn evaluate(net: &Network, ds: &Dataset, samples: &SampleSet, step: usize, cfg: &EvalConfig) -> Result<Evaluation> {
    let probe = Probe::new(net, ds, samples)?;
    let b = &probe.bundles;
    let nan = f64::NAN;

    let (train_loss, train_acc) = loss_and_accuracy(net, ds, &ds.train)?;
    let (test_loss, test_acc) = if ds.test.is_empty() {
        (nan, nan)
    } else {
        loss_and_accuracy(net, ds, &ds.test)?
    };
    let (sample_loss, _) = loss_and_accuracy(net, ds, &samples.indices)?;

    let s = sharpness_approx(b)?;
    let lvr = lvr_stats(b)?;
    let nvr = nvr_stats(b)?;
    let ld = local_dimensionality(b)?;
    let mn = matrix_normalized_sharpness(&probe)?;
    let adaptive = adaptive_sharpness_estimate(net, ds, samples, b, cfg.rho, cfg.mc_draws, cfg.seed)?;
    let (chain, mls_b, lvr_b) = if probe.first_is_linear {
        (
            Some(chain_abcd(&probe)?),
            mls_bound(&probe, s)?,
            lvr_bound_log(&probe, s)?,
        )
    } else {
        (None, nan, nan)
    };
    let hessian_trace = if cfg.hessian_oracle {
        Some(fd_hessian_trace(net, &ds.inputs, &ds.targets, &samples.indices, HESSIAN_STEP, cfg.seed)?.trace)
    } else {
        None
    };

    let mut reports = inequality_reports(&probe, &cfg.k_values)?;
    if probe.first_is_dense {
        let x = &b[0].x;
        reports.push(weight_gradient_identity_check(net, x)?);
    }

    let record = MetricRecord {
        step,
        train_loss,
        test_loss,
        sharpness_approx: s,
        hessian_trace,
        log_lvr_mean: lvr.log_lvr_mean,
        lvr_mean_log: lvr.lvr_mean_log,
        nvr_log: nvr.nvr_log,
        mls: mls(b)?,
        nmls: nmls(b)?,
        local_dim: ld.mean,
        mls_bound: mls_b,
        nmls_bound: nmls_bound(&probe, s)?,
        lvr_bound_log: lvr_b,
        nvr_bound_log: nvr_bound_log(&probe, s)?,
        chain_a: chain.map_or(nan, |c| c.a),
        chain_b: chain.map_or(nan, |c| c.b),
        chain_c: chain.map_or(nan, |c| c.c),
        chain_d: chain.map_or(nan, |c| c.d),
        adaptive_sharpness: adaptive.estimate,
        normalized_mls: normalized_mls(net, &probe, cfg.normalized_mode, cfg.seed)?,
        input_invariant_mls: input_invariant_mls(b)?,
        matrix_normalized_sharpness: mn.rhs,
        gen_gap_loss: test_loss - train_loss,
        gen_gap_acc: train_acc - test_acc,
        interpolation_flag: train_loss <= cfg.interp_eps,
        sample_loss,
        train_acc,
        test_acc,
        adaptive_sharpness_analytic: adaptive.analytic,
        matrix_normalized_lhs: mn.lhs,
        n_samples: samples.len(),
        zero_norm_excluded: samples.excluded_zero_norm + ds.excluded_zero_norm,
        zero_layer_inputs: zero_layer_inputs(&probe),
        local_dim_missing: ld.missing,
        lvr_underflow: lvr.underflow + nvr.underflow,
        output_exceeds_input: net.output_exceeds_input(),
    };
    Ok(Evaluation { record, reports })
}
