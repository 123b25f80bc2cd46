//! Learning-rate × batch × seed sweeps, correlation tables and test-set metrics.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalConfig, MetricRecord, SampleSet};
use crate::net::Network;
use crate::report::BoundReport;
use crate::train::{init_network, train_sgd, Checkpoint, TrainConfig};

/// Metrics entering the correlation table, in table order.
pub const CORRELATION_METRICS: [&str; 9] = [
    "local_dim",
    "sharpness_sqrt",
    "log_lvr_mean",
    "mls",
    "nmls",
    "gen_gap_loss",
    "mls_bound",
    "nmls_bound",
    "matrix_normalized_sharpness",
];

/// Leading CSV columns before the [`MetricRecord::FIELDS`].
pub const RUN_COLUMNS: [&str; 6] = ["step", "lr", "batch", "seed", "arch", "dataset"];

/// Seed of the `k`-th seed slot under `base` (splitmix64 finalizer).
pub fn derive_seed(base: u64, k: u64) -> u64 {
    let mut z = base ^ k.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub index: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub arch: String,
    pub dataset: String,
}

impl RunDescriptor {
    pub fn dir_name(&self) -> String {
        format!("run_{:04}", self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { step: usize, loss: f64 },
    Failed { message: String },
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub descriptor: RunDescriptor,
    pub status: RunStatus,
    pub checkpoints: Vec<Checkpoint>,
    /// Every inequality report that failed, with its step.
    pub violations: Vec<(usize, BoundReport)>,
    pub reports_checked: usize,
    /// Largest `lhs / rhs` per report name, across all checkpoints.
    pub tightness: BTreeMap<String, f64>,
}

impl RunResult {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn final_record(&self) -> Option<&MetricRecord> {
        self.checkpoints.last().map(|c| &c.record)
    }
}

/// Trains one run, evaluating metrics and inequality reports at every
/// checkpoint. Divergence and other failures land in the status.
pub fn run_single(cfg: &ExperimentConfig, ds: &Dataset, descriptor: RunDescriptor) -> RunResult {
    run_single_with(cfg, ds, descriptor, |_| {})
}

/// [`run_single`] with a callback on every checkpoint as it is produced.
pub fn run_single_with<F: FnMut(&Checkpoint)>(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    descriptor: RunDescriptor,
    mut on_checkpoint: F,
) -> RunResult {
    let mut result = RunResult {
        descriptor,
        status: RunStatus::Completed,
        checkpoints: Vec::new(),
        violations: Vec::new(),
        reports_checked: 0,
        tightness: BTreeMap::new(),
    };
    let d = &result.descriptor;
    let train = TrainConfig {
        learning_rate: d.lr,
        batch_size: d.batch,
        seed: d.seed,
        ..cfg.train.clone()
    };
    let eval = EvalConfig {
        seed: d.seed,
        interp_eps: train.interp_eps,
        ..cfg.eval.clone()
    };
    let outcome = (|| -> Result<Vec<Checkpoint>> {
        let samples = SampleSet::train_subsample(ds, train.metric_sample_budget)?;
        let mut net = init_network(&cfg.arch, d.seed)?;
        train_sgd(&mut net, ds, &train, |n, step| {
            let e = evaluate(n, ds, &samples, step, &eval)?;
            result.reports_checked += e.reports.len();
            for r in e.reports {
                if r.rhs != 0.0 && r.rhs.is_finite() {
                    let t = result.tightness.entry(r.name.clone()).or_insert(f64::NEG_INFINITY);
                    *t = t.max(r.lhs / r.rhs);
                }
                if !r.holds {
                    result.violations.push((step, r));
                }
            }
            let cp = Checkpoint {
                step,
                network: n.clone(),
                record: e.record.clone(),
            };
            on_checkpoint(&cp);
            result.checkpoints.push(cp);
            Ok(e.record)
        })
    })();
    match outcome {
        Ok(_) => {}
        Err(Error::Divergence { step, loss }) => {
            result
                .checkpoints
                .retain(|c| c.step < step || c.record.train_loss.is_finite() && c.record.train_loss <= 1e6);
            result.status = RunStatus::Diverged { step, loss };
        }
        Err(e) => result.status = RunStatus::Failed { message: e.to_string() },
    }
    result
}

/// Descriptors in grid order: learning rate outermost, then batch, then seed.
/// The seed slot alone determines the seed, so runs that differ only in
/// learning rate or batch size share their initialization.
pub fn sweep_descriptors(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<RunDescriptor>> {
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Error::config("grid", "sweep needs a grid"))?;
    if grid.is_empty() {
        return Err(Error::config("grid", "must contain at least one run"));
    }
    let mut out = Vec::with_capacity(grid.len());
    for &lr in &grid.learning_rates {
        for &batch in &grid.batch_sizes {
            for k in 0..grid.seeds {
                out.push(RunDescriptor {
                    index: out.len(),
                    lr,
                    batch,
                    seed: derive_seed(cfg.train.seed, k as u64),
                    arch: cfg.arch.label(),
                    dataset: ds.name.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Runs the whole grid on `cfg.parallelism` threads; results come back in
/// grid order.
pub fn run_sweep(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<RunResult>> {
    let descriptors = sweep_descriptors(cfg, ds)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::config("parallelism", e.to_string()))?;
    Ok(pool.install(|| descriptors.into_par_iter().map(|d| run_single(cfg, ds, d)).collect()))
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::shape("pearson", xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(Error::Insufficient(format!(
            "pearson needs at least 3 points, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x".into()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub metrics: Vec<String>,
    /// Symmetric, unit diagonal. `None` where fewer than 3 runs have finite
    /// values for both metrics.
    pub rho: Vec<Vec<Option<f64>>>,
    /// Runs entering each entry.
    pub n: Vec<Vec<usize>>,
}

impl CorrelationTable {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.metrics.iter().position(|m| m == a)?;
        let j = self.metrics.iter().position(|m| m == b)?;
        self.rho[i][j]
    }
}

/// Finite `(a, b)` value pairs over the records.
pub fn paired_values(records: &[&MetricRecord], a: &str, b: &str) -> (Vec<f64>, Vec<f64>) {
    records
        .iter()
        .filter_map(|r| {
            let (x, y) = (r.metric(a)?, r.metric(b)?);
            (x.is_finite() && y.is_finite()).then_some((x, y))
        })
        .unzip()
}

/// Pairwise Pearson table over final records. A metric that is constant
/// across runs makes the correlation undefined and is an error.
pub fn correlation_report(records: &[&MetricRecord]) -> Result<CorrelationTable> {
    if records.len() < 3 {
        return Err(Error::Insufficient(format!(
            "correlation needs at least 3 completed runs, got {}",
            records.len()
        )));
    }
    let k = CORRELATION_METRICS.len();
    let mut rho = vec![vec![None; k]; k];
    let mut n = vec![vec![0; k]; k];
    for i in 0..k {
        for j in i..k {
            let (a, b) = (CORRELATION_METRICS[i], CORRELATION_METRICS[j]);
            let (xs, ys) = paired_values(records, a, b);
            n[i][j] = xs.len();
            n[j][i] = xs.len();
            if xs.len() < 3 {
                continue;
            }
            let r = pearson(&xs, &ys).map_err(|e| match e {
                Error::ZeroVariance(side) => Error::ZeroVariance(if side == "x" { a.into() } else { b.into() }),
                other => other,
            })?;
            let r = if i == j { 1.0 } else { r };
            rho[i][j] = Some(r);
            rho[j][i] = Some(r);
        }
    }
    Ok(CorrelationTable {
        metrics: CORRELATION_METRICS.iter().map(|s| s.to_string()).collect(),
        rho,
        n,
    })
}

/// Writes one `scatter_<a>__<b>.csv` per unordered metric pair.
pub fn write_scatter_csvs(dir: &Path, records: &[(&RunDescriptor, &MetricRecord)]) -> Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::new();
    for i in 0..CORRELATION_METRICS.len() {
        for j in (i + 1)..CORRELATION_METRICS.len() {
            let (a, b) = (CORRELATION_METRICS[i], CORRELATION_METRICS[j]);
            let path = dir.join(format!("scatter_{a}__{b}.csv"));
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
            w.write_record(["run", "lr", "batch", "seed", a, b])?;
            for (d, r) in records {
                let (x, y) = (r.metric(a).unwrap_or(f64::NAN), r.metric(b).unwrap_or(f64::NAN));
                if x.is_finite() && y.is_finite() {
                    w.write_record([
                        d.index.to_string(),
                        d.lr.to_string(),
                        d.batch.to_string(),
                        d.seed.to_string(),
                        x.to_string(),
                        y.to_string(),
                    ])?;
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Contract(format!("{other:?}")),
        }
    } else {
        Error::Csv(e)
    }
}

/// One CSV row per checkpoint: [`RUN_COLUMNS`] then [`MetricRecord::FIELDS`]
/// (the record's own `step` column is not repeated).
pub fn write_metrics_csv<W: Write>(out: W, rows: &[(&RunDescriptor, &MetricRecord)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = RUN_COLUMNS
        .iter()
        .chain(MetricRecord::FIELDS.iter().skip(1))
        .copied()
        .collect();
    w.write_record(&header)?;
    for (d, r) in rows {
        let mut row = vec![
            r.step.to_string(),
            d.lr.to_string(),
            d.batch.to_string(),
            d.seed.to_string(),
            d.arch.clone(),
            d.dataset.clone(),
        ];
        row.extend(r.values().into_iter().skip(1));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn metrics_csv_path_write(path: &Path, rows: &[(&RunDescriptor, &MetricRecord)]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics_csv(std::io::BufWriter::new(f), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationSummary {
    pub reports_checked: usize,
    pub total: usize,
    pub by_name: BTreeMap<String, usize>,
    pub by_arch: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub descriptor: RunDescriptor,
    #[serde(flatten)]
    pub status: RunStatus,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: Vec<RunSummary>,
    pub completed: usize,
    pub violations: ViolationSummary,
    /// Worst `lhs / rhs` per inequality across every checkpoint.
    pub tightness: BTreeMap<String, f64>,
    pub correlation: Option<CorrelationTable>,
    pub correlation_error: Option<String>,
}

pub fn summarize(results: &[RunResult]) -> SweepSummary {
    let mut v = ViolationSummary {
        reports_checked: 0,
        total: 0,
        by_name: BTreeMap::new(),
        by_arch: BTreeMap::new(),
    };
    let mut tightness: BTreeMap<String, f64> = BTreeMap::new();
    for r in results {
        v.reports_checked += r.reports_checked;
        v.total += r.violations.len();
        for (_, rep) in &r.violations {
            *v.by_name.entry(rep.name.clone()).or_default() += 1;
            *v.by_arch.entry(r.descriptor.arch.clone()).or_default() += 1;
        }
        for (k, t) in &r.tightness {
            let e = tightness.entry(k.clone()).or_insert(f64::NEG_INFINITY);
            *e = e.max(*t);
        }
    }
    let finals: Vec<&MetricRecord> = results
        .iter()
        .filter(|r| r.is_completed())
        .filter_map(|r| r.final_record())
        .collect();
    let (correlation, correlation_error) = match correlation_report(&finals) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    SweepSummary {
        runs: results
            .iter()
            .map(|r| RunSummary {
                descriptor: r.descriptor.clone(),
                status: r.status.clone(),
                violations: r.violations.len(),
            })
            .collect(),
        completed: finals.len(),
        violations: v,
        tightness,
        correlation,
        correlation_error,
    }
}

/// Metric records of a trained network on the whole test split and on its
/// misclassified test points. The second is `None` at perfect test accuracy.
pub fn testset_metrics(
    net: &Network,
    ds: &Dataset,
    step: usize,
    cfg: &EvalConfig,
) -> Result<(MetricRecord, Option<MetricRecord>)> {
    let all = SampleSet::test_all(ds)?;
    let all_rec = evaluate(net, ds, &all, step, cfg)?.record;
    let mis = match SampleSet::test_misclassified(ds, net)? {
        Some(s) => Some(evaluate(net, ds, &s, step, cfg)?.record),
        None => None,
    };
    Ok((all_rec, mis))
}
