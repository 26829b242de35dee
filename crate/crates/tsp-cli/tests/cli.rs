//! Binary-level smoke tests: flag surface, stage flows, and replay
//! determinism through the executable.

#[path = "../../tsp-core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;

fn tsp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tsp"))
}

fn write(path: &Path, text: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

#[test]
fn help_lists_every_subcommand() {
    let output = tsp().arg("--help").output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    for subcommand in [
        "mine-rules",
        "score-rules",
        "partition",
        "predict",
        "audit",
        "evaluate",
        "pipeline",
    ] {
        assert!(text.contains(subcommand), "--help misses {subcommand}");
    }
}

#[test]
fn oracle_predict_then_evaluate_via_flags() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    let rules = dir.path().join("rules.txt");
    let test = dir.path().join("test.txt");
    write(
        &train,
        "b\tbrotherOf\tf\nf\tfatherOf\tc\nb\tuncleOf\tc\nb2\tbrotherOf\tf2\nf2\tfatherOf\tc2\n",
    );
    write(&rules, "uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)\n");
    write(&test, "b2\tuncleOf\tc2\n");
    let out = dir.path().join("out");

    let status = tsp()
        .args(["predict", "--predictor", "oracle", "--l-hops", "3", "--min-group", "2"])
        .arg("--train")
        .arg(&train)
        .arg("--rules")
        .arg(&rules)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let output = tsp()
        .arg("evaluate")
        .arg("--predictions")
        .arg(out.join("predictions.jsonl"))
        .args(["--l-hops", "3", "--min-group", "2"])
        .arg("--train")
        .arg(&train)
        .arg("--test")
        .arg(&test)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("jprecision: 1.000000"), "stdout: {text}");
    assert!(out.join("eval_report.json").exists());
}

#[test]
fn partition_command_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    write(&train, "a\tr\tb\nb\tr\tc\nc\tr\ta\n");
    let out = dir.path().join("out");
    let status = tsp()
        .args(["partition", "--min-group", "2", "--l-hops", "2"])
        .arg("--train")
        .arg(&train)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = std::fs::read_to_string(out.join("partition.tsv")).unwrap();
    assert!(manifest.contains("# groups:"));
}

#[test]
fn missing_rules_file_fails_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    write(&train, "a\tr\tb\n");
    let output = tsp()
        .arg("predict")
        .arg("--train")
        .arg(&train)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let text = String::from_utf8_lossy(&output.stderr);
    assert!(text.contains("rules"), "stderr: {text}");
}

#[test]
fn replay_pipeline_through_binary_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let fixture_dir = dir.path().join("fixtures");
    common::materialize_session_fixtures(&fixture_dir);

    let config_path = dir.path().join("session.conf");
    write(
        &config_path,
        &format!(
            "train = {}\ntest = {}\nbackend = replay\npredictor = llm\nfixture_dir = {}\n\
             endpoint = http://127.0.0.1:1/v1/chat/completions\nl_hops = 3\nmin_group = 2\n\
             max_group = 30\nseed = 0\n",
            common::session_train_path().display(),
            common::session_test_path().display(),
            fixture_dir.display()
        ),
    );

    let run = |out: &Path| {
        let output = tsp()
            .arg("pipeline")
            .arg("--config")
            .arg(&config_path)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    };
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    run(&out1);
    run(&out2);

    for file in ["rules.txt", "predictions.jsonl", "eval_report.json"] {
        assert_eq!(
            std::fs::read(out1.join(file)).unwrap(),
            std::fs::read(out2.join(file)).unwrap(),
            "{file} differs across binary replay runs"
        );
    }
}
