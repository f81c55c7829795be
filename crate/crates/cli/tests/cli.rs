use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use erosion_lab::output::RunManifest;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_erosion-lab"));
    c.env_remove("EROSION_LAB_OUT");
    c
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn summary(dir: &Path, file: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(file)).unwrap()).unwrap()
}

#[test]
fn geometry_verify_with_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    run_ok(&[
        "run",
        "geometry-prop1",
        "--seeds",
        "50",
        "--dim-max",
        "8",
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let s = summary(&out, "summary.json");
    assert_eq!(s["instances"], 50);
    assert!(s["dim_max_seen"].as_u64().unwrap() <= 8);
    assert!(s["naive"]["max_relative_error"].as_f64().unwrap() <= 1e-8);
    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.error, None);
    assert_eq!(m.config_digest.as_ref().unwrap().len(), 64);
    assert_eq!(m.tool_version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn same_config_same_bytes_regardless_of_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let common = ["run", "repo-3domain", "--seeds", "3", "--set", "repository.stream.tasks_per_stage=100"];
    run_ok(&[&common[..], &["--jobs", "1", "--out", a.to_str().unwrap()]].concat());
    run_ok(&[&common[..], &["--jobs", "3", "--out", b.to_str().unwrap()]].concat());
    for f in ["repo_events.csv", "repo_usage.csv", "repo_stages.csv", "seed_metrics.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (ma, mb) = (RunManifest::read(&a).unwrap(), RunManifest::read(&b).unwrap());
    assert_eq!(ma.config_digest, mb.config_digest);
}

#[test]
fn non_increasing_lambda_grid_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bad");
    let res = bin()
        .args(["run", "geometry-prop2-sweep", "--set", "geometry.lambdas=[1.0, 1.0, 2.0]", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("geometry.lambdas"), "{err}");
    let m = RunManifest::read(&out).unwrap();
    assert!(m.error.unwrap().contains("geometry.lambdas"));
    let files: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec!["manifest.json"]);
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"experiment_kind": "model_run", "n_seeds": 1, "model": {"n_stages": 2, "modes": ["cpe"], "typo": 1,
            "task": {"dim": 2, "n_classes": 2, "n_train": 10, "n_test": 10, "stage_index": 0, "shift_kind": "mean_drift",
                     "shift_magnitude": 1.0, "class_separation": 1.0, "noise_std": 1.0, "seed": 0}}}"#,
    )
    .unwrap();
    let res = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("typo") && err.contains("model"), "{err}");
}

#[test]
fn env_var_sets_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let res = bin()
        .env("EROSION_LAB_OUT", tmp.path())
        .args(["run", "memory-gating", "--seeds", "1", "--set", "repository.stream.tasks_per_stage=20"])
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(tmp.path().join("memory-gating").join("manifest.json").exists());
}

#[test]
fn compare_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s);
    let small = ["--set", "model.task.n_train=300", "--set", "model.train.epochs=3"];
    let run_mode = |mode: &str, dir: &Path| {
        let set = format!("model.modes=[\"{mode}\"]");
        run_ok(&[&["run", "model-3stage", "--seeds", "4"][..], &small[..], &["--set", &set, "--out", dir.to_str().unwrap()]].concat());
    };
    run_mode("vanilla", &p("v"));
    run_mode("cpe", &p("c"));

    run_ok(&["compare", p("v").to_str().unwrap(), p("v").to_str().unwrap(), "--out", p("self").to_str().unwrap()]);
    let s = summary(&p("self"), "comparison_summary.json");
    for (_, m) in s["metrics"].as_object().unwrap() {
        assert_eq!(m["mean_delta"], 0.0);
        assert_eq!(m["zero"], m["pairs"]);
    }

    run_ok(&["compare", p("v").to_str().unwrap(), p("c").to_str().unwrap(), "--out", p("vc").to_str().unwrap()]);
    let s = summary(&p("vc"), "comparison_summary.json");
    assert_eq!(s["metrics"]["stage0_final_acc"]["pairs"], 4);
    assert!(p("vc").join("comparison.csv").exists());

    run_ok(&[&["run", "model-3stage"][..], &small[..], &["--seeds", "3", "--out", p("other").to_str().unwrap()]].concat());
    let res = bin()
        .args(["compare", p("v").to_str().unwrap(), p("other").to_str().unwrap(), "--out", p("x").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("seed lists differ"));
}

#[test]
fn presets_listed() {
    let out = run_ok(&["presets"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for p in ["geometry-prop1", "geometry-prop2-sweep", "model-3stage", "repo-3domain", "memory-gating"] {
        assert!(text.contains(p));
    }
}
