//! End-to-end checks of the installed binary: exit codes, artifacts on
//! disk, stdout/stderr contracts, and worker-count invariance.

use std::path::Path;
use std::process::{Command, Output};

use boxcorr::train::metrics::{read_metrics, rows_equal_ignoring_wall};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_boxcorr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tiny_train_args<'a>(out: &'a str, seed: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--out",
        out,
        "--seed",
        seed,
        "--set",
        "epochs=0.016",
        "--set",
        "batch_size=4",
        "--set",
        "eval_images=8",
    ]
}

#[test]
fn train_writes_the_run_directory_and_reports_progress() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("run");
    let out_s = out.display().to_string();
    let res = run(&tiny_train_args(&out_s, "5"));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("run complete"), "{stdout}");
    assert!(stdout.contains("retrieval_top1"), "{stdout}");
    for f in [
        "config.json",
        "metrics.csv",
        "report.json",
        "checkpoints/final.ckpt",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert_eq!(read_metrics(&out.join("metrics.csv")).expect("metrics").len(), 4);
}

#[test]
fn worker_count_does_not_change_the_numbers() {
    let dir = tempfile::tempdir().expect("tempdir");
    let one = dir.path().join("w1");
    let three = dir.path().join("w3");
    for (workers, out) in [("1", &one), ("3", &three)] {
        let out_s = out.display().to_string();
        let res = bin()
            .args(tiny_train_args(&out_s, "21"))
            .env("BOXCORR_THREADS", workers)
            .output()
            .expect("binary runs");
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let a = read_metrics(&one.join("metrics.csv")).expect("metrics");
    let b = read_metrics(&three.join("metrics.csv")).expect("metrics");
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!(rows_equal_ignoring_wall(x, y), "step {} differs", x.step);
    }
    let ck_a = std::fs::read(one.join("checkpoints/final.ckpt")).expect("ckpt");
    let ck_b = std::fs::read(three.join("checkpoints/final.ckpt")).expect("ckpt");
    assert_eq!(ck_a, ck_b);
}

#[test]
fn eval_scores_a_checkpoint_deterministically() {
    let dir = tempfile::tempdir().expect("tempdir");
    let train_out = dir.path().join("run");
    let train_out_s = train_out.display().to_string();
    assert!(run(&tiny_train_args(&train_out_s, "9")).status.success());

    let ckpt = train_out.join("checkpoints/final.ckpt");
    let eval_once = |out: &Path| -> String {
        let out_s = out.display().to_string();
        let ckpt_s = ckpt.display().to_string();
        let res = run(&[
            "eval",
            &ckpt_s,
            "--out",
            &out_s,
            "--seed",
            "9",
            "--set",
            "eval_images=8",
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        let body = std::fs::read_to_string(out.join("report.json")).expect("report");
        let parsed: serde_json::Value = serde_json::from_str(&body).expect("json");
        assert!(parsed["retrieval_top1"].is_number());
        assert!(parsed["stats"]["min_dim_std"].is_number());
        body
    };
    let first = eval_once(&dir.path().join("e1"));
    let second = eval_once(&dir.path().join("e2"));
    assert_eq!(first, second, "evaluation is not deterministic");
}

#[test]
fn verify_emits_suite_json_and_exit_codes() {
    let res = run(&["verify", "geometry"]);
    assert!(res.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&res.stdout).expect("suite report json");
    assert_eq!(report["suite"], "geometry");
    assert_eq!(report["failures"], 0);
    assert!(report["checks"].as_u64().expect("count") >= 4);

    // a planted wrong derivative must flip the exit code and name itself
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("grad.json");
    let out_s = out.display().to_string();
    let res = run(&["verify", "grad", "--inject-fault", "--out", &out_s]);
    assert_eq!(res.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).expect("written report"))
            .expect("json");
    assert_eq!(report["failures"], 1);
    let bad: Vec<&str> = report["results"]
        .as_array()
        .expect("results")
        .iter()
        .filter(|r| r["passed"] == false)
        .map(|r| r["name"].as_str().expect("name"))
        .collect();
    assert_eq!(bad, ["corrupted_scale"]);

    let res = run(&["verify", "everything"]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("grad"), "{stderr}");
}

#[test]
fn closed_stdout_pipe_does_not_crash_the_run() {
    // `boxcorr verify ... | head` closes our stdout early; the process must
    // finish its work and exit cleanly, not crash on the first print
    let mut child = bin()
        .args(["verify", "grad"])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .expect("spawn");
    drop(child.stdout.take());
    let status = child.wait().expect("wait");
    assert_eq!(status.code(), Some(0), "broken pipe crashed the process");
}

#[test]
fn invalid_configuration_is_rejected_on_stderr() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out_s = dir.path().join("x").display().to_string();

    let res = run(&["train", "--out", &out_s, "--set", "aug.s_view=0.4"]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("s_view"), "{stderr}");

    let res = run(&["train", "--out", &out_s, "--set", "bogus_knob=1"]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("bogus_knob"), "{stderr}");
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg_path = dir.path().join("base.json");
    std::fs::write(
        &cfg_path,
        r#"{"epochs": 0.016, "batch_size": 4, "eval_images": 8, "seed": 3}"#,
    )
    .expect("config file");
    let out = dir.path().join("run");
    let out_s = out.display().to_string();
    let cfg_s = cfg_path.display().to_string();
    // the flag beats the file's seed; the file beats built-in defaults
    let res = run(&["train", "--config", &cfg_s, "--seed", "4", "--out", &out_s]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let written: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("config.json")).expect("config"),
    )
    .expect("json");
    assert_eq!(written["seed"], 4);
    assert_eq!(written["batch_size"], 4);
    assert_eq!(written["epochs"], 0.016);
}
