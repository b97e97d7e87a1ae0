//! End-to-end checks of the `kdrl` binary: artifacts on disk, exit codes,
//! override precedence, and manifest-based reproduction.

use std::path::Path;
use std::process::{Command, Output};

fn kdrl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kdrl"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn kdrl");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn base_config(out_dir: &Path) -> String {
    format!(
        r#"
schema = "kdrl.run/1"

[task]
kind = "modular-sum"
vocab_size = 8
count = 24
seed = 11

[policy]
kind = "tabular"
window = 3

[teacher]
source = "hand-built"
p_gold = 0.9
structure_prob = 0.99
think_continue = 0.5
window = 3

[train]
mode = "joint-kdrl"
estimator = "k2"
group_size = 4
questions_per_step = 4
max_response_len = 10
learning_rate = 40.0
steps = 12
seed = 5
checkpoint_every = 5

[train.beta]
kind = "constant"
value = 0.3

[output]
dir = "{}"
"#,
        out_dir.display()
    )
}

#[test]
fn train_writes_all_artifacts_and_eval_consumes_them() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let config_path = dir.path().join("run.toml");
    std::fs::write(&config_path, base_config(&out_dir)).unwrap();

    run_ok(kdrl().args(["train", "--config"]).arg(&config_path));
    for artifact in [
        "manifest.json",
        "metrics.jsonl",
        "dataset.jsonl",
        "policy-final.json",
        "policy-step-00005.json",
        "policy-step-00010.json",
    ] {
        assert!(out_dir.join(artifact).exists(), "missing {artifact}");
    }
    let metrics = std::fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 12);
    // Stable field names on every record.
    for line in metrics.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        for field in [
            "step",
            "reward_mean",
            "reward_ema",
            "resp_len_mean",
            "resp_len_ema",
            "clip_ratio",
            "repetition_rate",
            "kd_loss_unmasked",
            "entropy",
            "beta",
            "loss_total",
            "loss_grpo",
            "loss_kd",
            "loss_entropy",
        ] {
            assert!(record.get(field).is_some(), "missing metrics field {field}");
        }
    }

    // Build a teacher checkpoint from the same config.
    let teacher_path = dir.path().join("teacher.json");
    run_ok(
        kdrl()
            .args(["build-teacher", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&teacher_path),
    );

    // Evaluate it on the dataset the run persisted; twice, byte-identically.
    let eval = |seed: &str| {
        let out = run_ok(
            kdrl()
                .args(["eval", "--checkpoint"])
                .arg(&teacher_path)
                .arg("--dataset")
                .arg(out_dir.join("dataset.jsonl"))
                .args(["--n-samples", "16", "--seed", seed]),
        );
        String::from_utf8(out.stdout).unwrap()
    };
    let a = eval("3");
    let b = eval("3");
    assert_eq!(a, b, "same seed must give identical reports");
    let summary: serde_json::Value = serde_json::from_str(a.lines().last().unwrap()).unwrap();
    let aggregate = summary["aggregate"].as_f64().unwrap();
    assert!(aggregate > 0.6 && aggregate <= 1.0, "aggregate {aggregate}");
    // Per-question rates are multiples of 1/16.
    for line in a.lines().take(3) {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        let rate = record["pass_rate"].as_f64().unwrap();
        assert!((rate * 16.0).fract().abs() < 1e-12);
    }

    // Difficulty filtering against the trained policy runs end to end.
    let filtered_path = dir.path().join("filtered.jsonl");
    let out = run_ok(
        kdrl()
            .args(["filter-data", "--dataset"])
            .arg(out_dir.join("dataset.jsonl"))
            .arg("--checkpoint")
            .arg(&teacher_path)
            .args([
                "--easy-threshold",
                "0.9375",
                "--unsolved-cap",
                "0.1",
                "--n-samples",
                "16",
                "--max-len",
                "10",
            ])
            .arg("--out")
            .arg(&filtered_path),
    );
    assert!(filtered_path.exists());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("kept"), "summary line: {stdout}");
}

#[test]
fn overrides_supersede_file_values_and_manifest_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let config_path = dir.path().join("run.toml");
    std::fs::write(&config_path, base_config(&out_a)).unwrap();

    run_ok(
        kdrl()
            .args(["train", "--config"])
            .arg(&config_path)
            .args(["--beta-schedule", "linear:1.0:0.05:0.1", "--steps", "8"]),
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["train"]["beta"]["kind"], "linear-anneal");
    assert_eq!(manifest["config"]["train"]["beta"]["init"], 1.0);
    assert_eq!(manifest["config"]["train"]["steps"], 8);

    // Reproduce from the manifest into a fresh directory: byte-identical
    // metrics.
    let out_b = dir.path().join("b");
    run_ok(
        kdrl()
            .args(["train", "--from-manifest"])
            .arg(out_a.join("manifest.json"))
            .arg("--out")
            .arg(&out_b),
    );
    let bytes_a = std::fs::read(out_a.join("metrics.jsonl")).unwrap();
    let bytes_b = std::fs::read(out_b.join("metrics.jsonl")).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn invalid_config_fails_fast_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    let config_path = dir.path().join("bad.toml");
    let body = base_config(&out_dir).replace("[policy]", "[policy]\nmystery_knob = 1");
    std::fs::write(&config_path, body).unwrap();
    let out = kdrl()
        .args(["train", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mystery_knob"), "stderr: {stderr}");
    assert!(!out_dir.exists(), "no partial outputs on invalid config");
}

#[test]
fn out_root_env_var_anchors_relative_output_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    // Relative output dir, resolved against KDRL_OUT_ROOT.
    let config = base_config(Path::new("nested/run")).replace("steps = 12", "steps = 2");
    std::fs::write(&config_path, config).unwrap();
    run_ok(
        kdrl()
            .args(["train", "--config"])
            .arg(&config_path)
            .env("KDRL_OUT_ROOT", dir.path()),
    );
    assert!(dir.path().join("nested/run/metrics.jsonl").exists());
}

#[test]
fn oracle_check_exit_codes_and_determinism() {
    // Starved budget: every enumeration-backed check fails, exit is nonzero,
    // and the report bytes are stable.
    let run = |args: &[&str]| {
        let out = kdrl().arg("oracle-check").args(args).output().unwrap();
        (out.status.success(), out.stdout)
    };
    let (ok_a, report_a) = run(&["--budget", "1", "--seed", "4"]);
    let (ok_b, report_b) = run(&["--budget", "1", "--seed", "4"]);
    assert!(!ok_a && !ok_b);
    assert_eq!(report_a, report_b, "fixed seed must give identical bytes");
    assert!(String::from_utf8_lossy(&report_a).contains("budget"));

    // Full suite passes at the default budget and seed.
    let (ok, report) = run(&[]);
    let text = String::from_utf8_lossy(&report);
    assert!(ok, "identity suite failed:\n{text}");
    assert!(text.lines().last().unwrap().contains("\"all_passed\":true"));
}
