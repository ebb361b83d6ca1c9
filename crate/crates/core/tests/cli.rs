use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pvmaint_core::pipeline::Manifest;
use serde_json::json;

fn pvmaint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvmaint"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// 60-day plant: class 1 has a two-hour daytime event on ten days, class 3
/// one event spanning exactly five grid points, class 2 none.
fn synth_config() -> String {
    let mut faults: Vec<serde_json::Value> = (0..10)
        .map(|k| {
            let date = chrono::NaiveDate::from_ymd_opt(2015, 2, 10).unwrap() + chrono::Duration::days(2 * k);
            json!({
                "class_id": 1,
                "start": format!("{date}T10:00:00Z"),
                "end": format!("{date}T11:55:00Z"),
                "lead_days": 1.0,
                "signature": [{"tag": "i_dc", "amount": -0.4}]
            })
        })
        .collect();
    faults.push(json!({"class_id": 3, "start": "2015-02-21T12:00:00Z", "end": "2015-02-21T12:20:00Z"}));
    json!({"seed": 11, "n_days": 60, "faults": faults}).to_string()
}

const RUN: &str = r#"{
  "scada": "scada.csv",
  "logbook": "logbook.csv",
  "taxonomy": "taxonomy.csv",
  "datasheet": "datasheet.json",
  "out_dir": "out",
  "train_start": "2015-01-01",
  "train_end": "2015-02-05",
  "seed": 5,
  "sdm": {"som": {"rows": 8, "cols": 8, "epochs": 5, "radius_initial": 4.0}, "warmup_days": 7},
  "fpm": {"mc_runs": 3, "nn": {"max_epochs": 60}}
}"#;

struct Plant {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Plant {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("synth.json"), synth_config()).unwrap();
        fs::write(root.join("run.json"), RUN).unwrap();
        ok(&pvmaint(&["synth", "--config", root.join("synth.json").to_str().unwrap()]));
        Plant { _dir: dir, root }
    }

    fn run(&self, cmd: &str, extra: &[&str]) -> Output {
        let cfg = self.root.join("run.json");
        let mut args = vec![cmd, "--config", cfg.to_str().unwrap()];
        args.extend_from_slice(extra);
        pvmaint(&args)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join("out").join(name)
    }
}

fn manifest(path: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn help_and_unknown_flags() {
    let help = pvmaint(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("sdm-train"));
    assert_eq!(pvmaint(&["fpm-eval", "--help"]).status.code(), Some(0));
    let bad = pvmaint(&["preprocess", "--no-such-flag"]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(pvmaint(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_input_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, RUN).unwrap();
    let out = pvmaint(&["preprocess", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scada.csv"));
    assert!(!dir.path().join("out").exists());

    let missing_cfg = pvmaint(&["preprocess", "--config", "/nonexistent/run.json"]);
    assert_ne!(missing_cfg.status.code(), Some(0));
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, RUN.replace("\"2015-02-05\"", "\"2014-12-01\"")).unwrap();
    assert_eq!(pvmaint(&["sdm-train", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn full_pipeline_is_reproducible() {
    let plant = Plant::new();
    let inputs_before = snapshot(&plant.root);

    for cmd in ["preprocess", "sdm-train", "sdm-run", "fpm-train"] {
        ok(&plant.run(cmd, &[]));
    }
    ok(&plant.run("fpm-eval", &["--horizons", "0,24"]));
    ok(&plant.run("energy", &[]));
    assert_eq!(snapshot(&plant.root), inputs_before, "inputs were modified");

    let metrics = fs::read_to_string(plant.out("fpm_metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{metrics}");
    assert!(rows.iter().all(|r| r.starts_with("1,")));
    assert_eq!(rows[0].split(',').nth(1), Some("0"));
    assert_eq!(rows[1].split(',').nth(1), Some("24"));

    let skipped: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(plant.out("fpm_eval_skipped.json")).unwrap()).unwrap();
    let skipped_ids: Vec<u64> = skipped
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["class_id"].as_u64().unwrap())
        .collect();
    assert_eq!(skipped_ids, vec![2, 3]);
    let class3 = skipped.as_array().unwrap().iter().find(|s| s["class_id"] == 3).unwrap();
    assert_eq!(class3["n_fault"], 5);

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(plant.out("fpm_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["trained"][0]["class_id"], 1);
    assert_eq!(summary["skipped_classes"].as_array().unwrap().len(), 2);

    let first: Vec<Manifest> = ["preprocess", "sdm-train", "sdm-run", "fpm-train", "fpm-eval", "energy"]
        .iter()
        .map(|c| manifest(&plant.out(&Manifest::file_name(c))))
        .collect();
    let outputs_first = snapshot(&plant.root.join("out"));

    for cmd in ["preprocess", "sdm-train", "sdm-run", "fpm-train"] {
        ok(&plant.run(cmd, &["--jobs", "1"]));
    }
    ok(&plant.run("fpm-eval", &["--horizons", "0,24", "--jobs", "3"]));
    ok(&plant.run("energy", &[]));
    let second: Vec<Manifest> = ["preprocess", "sdm-train", "sdm-run", "fpm-train", "fpm-eval", "energy"]
        .iter()
        .map(|c| manifest(&plant.out(&Manifest::file_name(c))))
        .collect();
    assert_eq!(first, second);
    assert_eq!(snapshot(&plant.root.join("out")), outputs_first);
}

#[test]
fn seed_flag_changes_stochastic_outputs() {
    let plant = Plant::new();
    ok(&plant.run("sdm-train", &[]));
    let a = fs::read(plant.out("sdm_model.json")).unwrap();
    ok(&plant.run("sdm-train", &["--seed", "6"]));
    let b = fs::read(plant.out("sdm_model.json")).unwrap();
    assert_ne!(a, b);
    assert_eq!(manifest(&plant.out(&Manifest::file_name("sdm-train"))).global_seed, 6);
}
