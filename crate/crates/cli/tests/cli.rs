use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use das_core::io::{write_run, FeatureStorage, MANIFEST_FILE};
use das_core::synth::{generate_trajectory, SyntheticConfig};
use serde_json::Value;

fn das(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_das"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn doc(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is a report document")
}

fn small_config(dir: &Path, trajectory_length: usize) -> PathBuf {
    let cfg = SyntheticConfig {
        images_per_domain: 30,
        trajectory_length,
        ..Default::default()
    };
    let path = dir.join("synth.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path
}

/// Synthesizes a small run through the CLI and returns its manifest path.
fn synth(dir: &Path, trajectory_length: usize) -> String {
    let cfg = small_config(dir, trajectory_length);
    let out = dir.join("run");
    let o = das(&["synth", "--out", out.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join(MANIFEST_FILE).to_string_lossy().into_owned()
}

fn edit(manifest: &str, f: impl FnOnce(&mut Value)) {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    f(&mut v);
    fs::write(manifest, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn score_report_shape() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 5);
    assert_eq!(code(&das(&["validate", "--manifest", &m])), 0);
    let d = doc(&das(&["score", "--manifest", &m]));
    assert_eq!(d["schema"], "das.report.v1");
    assert_eq!(d["kind"], "score");
    let rows = d["checkpoints"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    let selected = d["selected_checkpoint_id"].as_str().unwrap();
    assert_eq!(rows.iter().filter(|r| r["id"] == selected).count(), 1);
    for r in rows {
        for key in ["fis", "fis_norm", "pdr", "pdr_norm", "das", "d_intra", "d_inter"] {
            assert!(r[key].is_f64(), "{key}");
        }
    }
}

#[test]
fn zero_lambda_reduces_to_flatness() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 4);
    let d = doc(&das(&["score", "--manifest", &m, "--lambda", "0"]));
    for r in d["checkpoints"].as_array().unwrap() {
        assert_eq!(r["das"], r["fis_norm"]);
    }
}

#[test]
fn outputs_are_deterministic_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 4);
    let a = das(&["corr", "--manifest", &m]);
    let b = Command::new(env!("CARGO_BIN_EXE_das"))
        .args(["corr", "--manifest", &m])
        .env("DAS_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn missing_perturbed_pass_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 3);
    edit(&m, |v| {
        v["checkpoints"][1]["target_perturbed"] = Value::Array(vec![]);
    });
    let o = das(&["score", "--manifest", &m]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing perturbed pass"));
    let v = das(&["validate", "--manifest", &m]);
    assert_eq!(code(&v), 2);
    let report: Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(report["scoreable"], false);
    assert_eq!(report["findings"][0]["kind"], "missing perturbed pass");
}

#[test]
fn baselines_columns_follow_flags() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 3);
    let d = doc(&das(&["baselines", "--manifest", &m, "--atc-thresholds", "0.3,0.95", "--fd-mode", "diagonal"]));
    let first = &d["checkpoints"][0];
    assert_eq!(first["atc"].as_array().unwrap().len(), 2);
    assert_eq!(first["atc"][1]["threshold"], 0.95);
    assert!(first["fd"].is_f64());
    assert_eq!(d["fd_mode"], "diagonal");
}

#[test]
fn baselines_without_proposals_drop_fd() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = generate_trajectory(&SyntheticConfig {
        images_per_domain: 10,
        trajectory_length: 2,
        ..Default::default()
    })
    .unwrap();
    for c in &mut run.checkpoints {
        for pass in [&mut c.target_original, &mut c.source_proposals] {
            pass.images.iter_mut().for_each(|img| img.proposals.clear());
        }
    }
    let m = write_run(&dir.path().join("run"), &run, FeatureStorage::Sidecar).unwrap();
    let m = m.to_str().unwrap();
    let o = das(&["baselines", "--manifest", m]);
    let d = doc(&o);
    assert!(d["checkpoints"][0]["fd"].is_null());
    assert!(d["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().starts_with("FD omitted")));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FD omitted"));
    assert_eq!(code(&das(&["score", "--manifest", m])), 2);
}

#[test]
fn single_checkpoint_runs_note_degenerate_normalization() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 1);
    assert_eq!(code(&das(&["validate", "--manifest", &m])), 0);
    let d = doc(&das(&["score", "--manifest", &m]));
    let notes = d["notes"].as_array().unwrap();
    assert!(notes.iter().any(|n| n.as_str().unwrap().contains("degenerate normalization")));
    assert_eq!(d["checkpoints"][0]["das"], 1.0);
    let b = doc(&das(&["baselines", "--manifest", &m]));
    assert!(!b["notes"].as_array().unwrap().is_empty());
    let c = doc(&das(&["corr", "--manifest", &m]));
    assert!(c["correlations"][0]["pcc"].is_null());
}

#[test]
fn correlation_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 6);
    let d = doc(&das(&["corr", "--manifest", &m]));
    let corr = d["correlations"].as_array().unwrap();
    let metrics: Vec<&str> = corr.iter().map(|c| c["metric"].as_str().unwrap()).collect();
    assert_eq!(&metrics[..5], ["das", "fis", "pdr", "ps", "es"]);
    assert!(corr[0]["pcc"].as_f64().unwrap().abs() <= 1.0);
    // Every ATC@0.3 score is 1 on this run, so its correlation is undefined.
    let atc = corr.iter().find(|c| c["metric"] == "atc@0.3").unwrap();
    assert!(atc["pcc"].is_null());
    assert_eq!(atc["note"], "undefined: DegenerateVariance");
    let sel = &d["selection"];
    assert!(sel["improvement"].as_str().unwrap().starts_with(['+', '-']));
    assert_eq!(d["series"]["map50"].as_array().unwrap().len(), 6);
    let table = das(&["corr", "--manifest", &m, "--format", "table"]);
    let text = String::from_utf8_lossy(&table.stdout);
    assert!(text.contains("Last") && text.contains("Oracle") && text.contains("Imp."));
}

#[test]
fn ground_truth_is_required_for_supervised_commands() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 3);
    let d = doc(&das(&["eval-map", "--manifest", &m]));
    let map = d["checkpoints"][0]["map50"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    edit(&m, |v| {
        v.as_object_mut().unwrap().remove("ground_truth");
    });
    assert_eq!(code(&das(&["corr", "--manifest", &m])), 4);
    assert_eq!(code(&das(&["eval-map", "--manifest", &m])), 4);
    assert_eq!(code(&das(&["score", "--manifest", &m])), 0);
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = das(&["synth", "--out", out.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
        let mut stack = vec![out.clone()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push((p.strip_prefix(&out).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn io_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(code(&das(&["score", "--manifest", missing.to_str().unwrap()])), 5);

    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let nested = blocker.join("run");
    assert_eq!(code(&das(&["synth", "--out", nested.to_str().unwrap()])), 5);

    let m = synth(dir.path(), 2);
    assert_eq!(code(&das(&["score", "--manifest", &m, "--conf-thresh", "1.5"])), 2);
    assert_eq!(code(&das(&["score", "--manifest", &m, "--lambda", "-1"])), 2);

    let bad_cfg = dir.path().join("bad.json");
    fs::write(&bad_cfg, r#"{"num_classes": 0}"#).unwrap();
    let out = dir.path().join("never");
    assert_eq!(
        code(&das(&["synth", "--out", out.to_str().unwrap(), "--config", bad_cfg.to_str().unwrap()])),
        2
    );

    let report = dir.path().join("report.txt");
    let o = das(&["score", "--manifest", &m, "--format", "table", "--out", report.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    assert!(fs::read_to_string(&report).unwrap().contains("selected: "));
}
