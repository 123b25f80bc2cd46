use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_sharpcomp");

const CONFIG: &str = r#"{
  "schema_version": 1,
  "data": {"source": {"kind": "gaussian", "n_per_class": 10, "classes": 2, "dim": 6, "separation": 1.5, "seed": 3}},
  "arch": {"name": "mlp", "widths": [6, 8, 2], "activation": "tanh"},
  "train": {"learning_rate": 0.1, "batch_size": 4, "steps": 60, "eval_every": 30, "seed": 1, "metric_sample_budget": 12},
  "eval": {"mc_draws": 4},
  "grid": {"learning_rates": [0.05, 0.1, 0.2], "batch_sizes": [4, 8, 16], "seeds": 3}
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("SHARPCOMP_OUT")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_manifest_checkpoints_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    let o = run(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("step 60 loss"));

    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("checkpoints/step_000030.json").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let echoed = serde_json::to_string(&manifest["config"]).unwrap();
    let reparsed = sharpcomp::config::ExperimentConfig::from_json(&echoed).unwrap();
    assert_eq!(
        reparsed,
        sharpcomp::config::ExperimentConfig::from_json(CONFIG).unwrap()
    );
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    let o = run(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--steps",
        "10",
        "--eval-every",
        "5",
        "--lr",
        "0.07",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,0.07,4,1,"));
}

#[test]
fn env_var_sets_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &CONFIG.replace("\"steps\": 60", "\"steps\": 4"));
    let root = tmp.path().join("root");
    let o = Command::new(BIN)
        .args(["train", "--config", s(&cfg)])
        .env("SHARPCOMP_OUT", &root)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dirs: Vec<_> = fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(dirs.len(), 1);
    assert!(dirs[0].starts_with("train-"));
}

#[test]
fn invalid_learning_rate_exits_2_naming_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &CONFIG.replace("\"learning_rate\": 0.1", "\"learning_rate\": -1"),
    );
    let o = run(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn missing_dataset_exits_4_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let text = CONFIG.replace(
        r#"{"kind": "gaussian", "n_per_class": 10, "classes": 2, "dim": 6, "separation": 1.5, "seed": 3}"#,
        r#"{"kind": "csv", "path": "absent-data.csv", "n_targets": 2, "one_hot": true}"#,
    );
    let cfg = write_config(tmp.path(), &text);
    let o = run(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("absent-data.csv"));
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &CONFIG.replace("\"steps\": 60", "\"steps\": 400"));
    let o = run(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("o")),
        "--lr",
        "25",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged at step"));
}

#[test]
fn verify_bounds_passes_then_catches_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    assert_eq!(
        run(&["train", "--config", s(&cfg), "--out", s(&out)]).status.code(),
        Some(0)
    );
    let ck = out.join("checkpoints/step_000060.json");

    let o = run(&["verify-bounds", "--checkpoint", s(&ck), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("HOLDS"));

    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&ck).unwrap()).unwrap();
    let rec = &mut v["record"];
    rec["chain_A"] = serde_json::json!(1e6);
    rec["mls"] = serde_json::json!(1e6);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();
    let o = run(&["verify-bounds", "--checkpoint", s(&bad), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(5));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("VIOLATED") && stdout.contains("lhs=") && stdout.contains("slack="));

    let o = run(&[
        "verify-bounds",
        "--checkpoint",
        s(&ck),
        "--config",
        s(&cfg),
        "--samples",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_layout_and_correlate_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("sweep");
    let o = run(&["sweep", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("run_"))
        .count();
    assert_eq!(runs, 27);
    assert!(out.join("summary.json").exists());

    assert_eq!(run(&["correlate", "--sweep-dir", s(&out)]).status.code(), Some(0));
    let first = fs::read(out.join("correlation.json")).unwrap();
    let o = run(&["correlate", "--sweep-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(first, fs::read(out.join("correlation.json")).unwrap());
    assert!(String::from_utf8_lossy(&o.stdout).contains("sharpness_sqrt"));
}

#[test]
fn correlate_on_too_few_runs_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let text = CONFIG.replace(
        r#""grid": {"learning_rates": [0.05, 0.1, 0.2], "batch_sizes": [4, 8, 16], "seeds": 3}"#,
        r#""grid": {"learning_rates": [0.1], "batch_sizes": [4], "seeds": 2}"#,
    );
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("sweep");
    assert_eq!(
        run(&["sweep", "--config", s(&cfg), "--out", s(&out)]).status.code(),
        Some(0)
    );
    let o = run(&["correlate", "--sweep-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn metrics_command_writes_selector_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    assert_eq!(
        run(&["train", "--config", s(&cfg), "--out", s(&out)]).status.code(),
        Some(0)
    );
    let ck = out.join("checkpoints/step_000060.json");
    let m = tmp.path().join("m");
    let o = run(&["metrics", "--checkpoint", s(&ck), "--config", s(&cfg), "--out", s(&m)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(m.join("metrics_train.csv").exists() && m.join("metrics_test.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(
            run(&["train", "--config", s(&cfg), "--out", s(d)]).status.code(),
            Some(0)
        );
    }
    assert_eq!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("checkpoints/step_000060.json")).unwrap(),
        fs::read(b.join("checkpoints/step_000060.json")).unwrap()
    );
}
