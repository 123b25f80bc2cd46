use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sharpcomp::config::ExperimentConfig;
use sharpcomp::experiments::{
    correlation_report, metrics_csv_path_write, run_single_with, run_sweep, summarize, write_scatter_csvs,
    CorrelationTable, RunDescriptor, RunResult, RunStatus,
};
use sharpcomp::metrics::{evaluate, MetricRecord, SampleSet};
use sharpcomp::train::{load_checkpoint, save_checkpoint};
use sharpcomp::Error;

use crate::exit::{io_failure, Failure, BOUND_VIOLATED, CONFIG};
use crate::manifest::{config_hash, RunManifest, MANIFEST_FILE};
use crate::{Overrides, SelectorArg};

pub const OUT_ENV: &str = "SHARPCOMP_OUT";
pub const FINAL_RECORDS: &str = "final_records.json";

type CmdResult = Result<(), Failure>;

/// Final state of one run, as stored by `sweep` and read by `correlate`.
#[derive(Debug, Serialize, Deserialize)]
struct FinalEntry {
    descriptor: RunDescriptor,
    #[serde(flatten)]
    status: RunStatus,
    record: Option<MetricRecord>,
}

fn load_config(path: &Path, o: &Overrides) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(v) = o.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = o.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = o.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = o.eval_every {
        cfg.train.eval_every = v;
    }
    if let Some(v) = o.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = o.parallelism {
        cfg.parallelism = v;
    }
    cfg.validate()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn output_dir(out: Option<PathBuf>, command: &str, cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    let dir = out.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("sharpcomp-out"), PathBuf::from);
        root.join(format!("{command}-{}", &config_hash(cfg)[..12]))
    });
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    Ok(dir)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let body = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, body + "\n").map_err(|e| io_failure(path, e))
}

fn set_threads(n: usize) {
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn checkpoint_rows(run: &RunResult) -> Vec<(&RunDescriptor, &MetricRecord)> {
    run.checkpoints.iter().map(|c| (&run.descriptor, &c.record)).collect()
}

fn print_violations(run: &RunResult) {
    for (step, r) in &run.violations {
        println!("run {} step {step}: {r}", run.descriptor.index);
    }
}

pub fn train(config: &Path, out: Option<PathBuf>, o: &Overrides) -> CmdResult {
    let (cfg, base) = load_config(config, o)?;
    let dir = output_dir(out, "train", &cfg)?;
    let manifest = RunManifest::begin(
        "train",
        &cfg,
        vec![
            dir.join("metrics.csv"),
            dir.join("checkpoints"),
            dir.join("summary.json"),
        ],
    );
    manifest.write(&dir)?;
    set_threads(cfg.parallelism);
    let ds = cfg.data.load(&base)?;
    let ck_dir = dir.join("checkpoints");
    create_dir(&ck_dir)?;

    let descriptor = RunDescriptor {
        index: 0,
        lr: cfg.train.learning_rate,
        batch: cfg.train.batch_size,
        seed: cfg.train.seed,
        arch: cfg.arch.label(),
        dataset: ds.name.clone(),
    };
    let mut save_err = None;
    let run = run_single_with(&cfg, &ds, descriptor, |cp| {
        println!("step {} loss {:e}", cp.step, cp.record.train_loss);
        let path = ck_dir.join(format!("step_{:06}.json", cp.step));
        if let Err(e) = save_checkpoint(&path, cp.step, &cp.network, Some(&cp.record)) {
            save_err.get_or_insert(e);
        }
    });
    if let Some(e) = save_err {
        return Err(e.into());
    }
    metrics_csv_path_write(&dir.join("metrics.csv"), &checkpoint_rows(&run))?;
    write_json(&dir.join("summary.json"), &summarize(std::slice::from_ref(&run)))?;
    print_violations(&run);
    manifest.finish(&dir)?;
    match run.status {
        RunStatus::Completed => {
            println!("wrote {}", dir.display());
            Ok(())
        }
        RunStatus::Diverged { step, loss } => Err(Error::Divergence { step, loss }.into()),
        RunStatus::Failed { message } => Err(Failure::new(CONFIG, message)),
    }
}

pub fn sweep(config: &Path, out: Option<PathBuf>, o: &Overrides) -> CmdResult {
    let (cfg, base) = load_config(config, o)?;
    if cfg.grid.is_none() {
        return Err(Error::Config {
            field: "grid".into(),
            reason: "sweep needs a grid".into(),
        }
        .into());
    }
    let dir = output_dir(out, "sweep", &cfg)?;
    let manifest = RunManifest::begin(
        "sweep",
        &cfg,
        ["sweep_metrics.csv", FINAL_RECORDS, "summary.json", "scatter"]
            .iter()
            .map(|f| dir.join(f))
            .collect(),
    );
    manifest.write(&dir)?;
    let ds = cfg.data.load(&base)?;
    let runs = run_sweep(&cfg, &ds)?;

    let mut entries = Vec::with_capacity(runs.len());
    for run in &runs {
        let run_dir = dir.join(run.descriptor.dir_name());
        create_dir(&run_dir)?;
        metrics_csv_path_write(&run_dir.join("metrics.csv"), &checkpoint_rows(run))?;
        if let Some(cp) = run.checkpoints.last() {
            save_checkpoint(&run_dir.join("final.json"), cp.step, &cp.network, Some(&cp.record))?;
        }
        let entry = FinalEntry {
            descriptor: run.descriptor.clone(),
            status: run.status.clone(),
            record: run.is_completed().then(|| run.final_record().cloned()).flatten(),
        };
        write_json(&run_dir.join("status.json"), &entry)?;
        let d = &run.descriptor;
        println!(
            "run {:04} lr {} batch {} seed {}: {}",
            d.index,
            d.lr,
            d.batch,
            d.seed,
            match &run.status {
                RunStatus::Completed => format!("loss {:e}", run.final_record().map_or(f64::NAN, |r| r.train_loss)),
                RunStatus::Diverged { step, loss } => format!("diverged at step {step} (loss {loss:e})"),
                RunStatus::Failed { message } => format!("failed: {message}"),
            }
        );
        print_violations(run);
        entries.push(entry);
    }
    let rows: Vec<_> = runs.iter().flat_map(checkpoint_rows).collect();
    metrics_csv_path_write(&dir.join("sweep_metrics.csv"), &rows)?;
    write_json(&dir.join(FINAL_RECORDS), &entries)?;
    let summary = summarize(&runs);
    write_json(&dir.join("summary.json"), &summary)?;
    let scatter = dir.join("scatter");
    create_dir(&scatter)?;
    let finals: Vec<_> = runs
        .iter()
        .filter(|r| r.is_completed())
        .filter_map(|r| r.final_record().map(|rec| (&r.descriptor, rec)))
        .collect();
    write_scatter_csvs(&scatter, &finals)?;
    println!(
        "{} runs, {} completed, {} of {} inequality reports violated",
        runs.len(),
        summary.completed,
        summary.violations.total,
        summary.violations.reports_checked
    );
    manifest.finish(&dir)
}

pub fn metrics(checkpoint: &Path, config: &Path, selectors: &[SelectorArg], out: Option<PathBuf>) -> CmdResult {
    let (cfg, base) = load_config(config, &Overrides::default())?;
    let (step, net, _) = load_checkpoint(checkpoint)?;
    let ds = cfg.data.load(&base)?;
    let dir = match out {
        Some(d) => d,
        None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    create_dir(&dir)?;
    set_threads(cfg.parallelism);
    let descriptor = RunDescriptor {
        index: 0,
        lr: cfg.train.learning_rate,
        batch: cfg.train.batch_size,
        seed: cfg.train.seed,
        arch: cfg.arch.label(),
        dataset: ds.name.clone(),
    };
    let eval = sharpcomp::metrics::EvalConfig {
        seed: cfg.train.seed,
        interp_eps: cfg.train.interp_eps,
        ..cfg.eval.clone()
    };
    for sel in selectors {
        let (name, samples) = match sel {
            SelectorArg::Train => (
                "train",
                Some(SampleSet::train_subsample(&ds, cfg.train.metric_sample_budget)?),
            ),
            SelectorArg::Test => ("test", Some(SampleSet::test_all(&ds)?)),
            SelectorArg::Misclassified => ("misclassified", SampleSet::test_misclassified(&ds, &net)?),
        };
        let Some(samples) = samples else {
            println!("{name}: absent (no misclassified test points)");
            continue;
        };
        let rec = evaluate(&net, &ds, &samples, step, &eval)?.record;
        println!(
            "{name}: n {} sharpness {:e} mls {:e} nmls {:e} local_dim {:e} log_lvr {:e}",
            rec.n_samples, rec.sharpness_approx, rec.mls, rec.nmls, rec.local_dim, rec.log_lvr_mean
        );
        metrics_csv_path_write(&dir.join(format!("metrics_{name}.csv")), &[(&descriptor, &rec)])?;
    }
    Ok(())
}

pub fn verify_bounds(checkpoint: &Path, config: &Path, samples: Option<usize>) -> CmdResult {
    let (cfg, base) = load_config(config, &Overrides::default())?;
    let (step, net, stored) = load_checkpoint(checkpoint)?;
    let ds = cfg.data.load(&base)?;
    set_threads(cfg.parallelism);
    let budget = samples.unwrap_or(cfg.train.metric_sample_budget);
    let set = SampleSet::train_subsample(&ds, budget)?;
    let eval = sharpcomp::metrics::EvalConfig {
        seed: cfg.train.seed,
        interp_eps: cfg.train.interp_eps,
        ..cfg.eval.clone()
    };
    let mut reports = evaluate(&net, &ds, &set, step, &eval)?.reports;
    if let Some(rec) = stored {
        reports.extend(rec.stored_reports());
    }
    for r in &reports {
        println!("{r}");
    }
    let bad = reports.iter().filter(|r| !r.holds).count();
    if bad > 0 {
        return Err(Failure::new(
            BOUND_VIOLATED,
            format!("{bad} of {} bounds violated", reports.len()),
        ));
    }
    println!("all {} bounds hold at step {step}", reports.len());
    Ok(())
}

pub fn correlate(sweep_dir: &Path) -> CmdResult {
    let path = sweep_dir.join(FINAL_RECORDS);
    let text = std::fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
    let entries: Vec<FinalEntry> = serde_json::from_str(&text).map_err(Error::from)?;
    let finals: Vec<_> = entries
        .iter()
        .filter_map(|e| e.record.as_ref().map(|r| (&e.descriptor, r)))
        .collect();
    let records: Vec<&MetricRecord> = finals.iter().map(|(_, r)| *r).collect();
    let table = correlation_report(&records)?;
    print_table(&table);
    write_json(&sweep_dir.join("correlation.json"), &table)?;
    let scatter = sweep_dir.join("scatter");
    create_dir(&scatter)?;
    write_scatter_csvs(&scatter, &finals)?;
    if !sweep_dir.join(MANIFEST_FILE).exists() {
        eprintln!("warning: {} has no manifest", sweep_dir.display());
    }
    Ok(())
}

fn print_table(t: &CorrelationTable) {
    let w = t.metrics.iter().map(String::len).max().unwrap_or(0);
    print!("{:w$}", "");
    for (j, _) in t.metrics.iter().enumerate() {
        print!(" {:>7}", format!("[{j}]"));
    }
    println!();
    for (i, m) in t.metrics.iter().enumerate() {
        print!("{m:w$}");
        for j in 0..t.metrics.len() {
            match t.rho[i][j] {
                Some(r) => print!(" {r:>7.3}"),
                None => print!(" {:>7}", "-"),
            }
        }
        println!("  [{i}] n={}", t.n[i][0]);
    }
}
