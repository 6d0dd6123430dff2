//! CLI behavior: exit codes, config plumbing and artifact layout.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_guidance-rl"))
}

fn smoke_config(dir: &Path) -> String {
    format!(
        r#"
out_dir = "{}"
eval_episodes = 4

[sampler]
total_steps = 8
gen_len = 8
block_length = 8

[task_params]
keyword_count = 3

[ppo]
iterations = 2
episodes_per_iteration = 4
minibatch_size = 16
update_epochs = 1

[aggregation]
trajectories = 5
"#,
        dir.display()
    )
}

#[test]
fn print_config_emits_parseable_defaults() {
    let out = bin().args(["print-config"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed = guidance_rl::harness::ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(parsed, guidance_rl::harness::ExperimentConfig::default());

    let out = bin().args(["print-config", "--task", "pos_to_neg"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("task = \"pos_to_neg\""));
}

#[test]
fn config_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "definitely_not_a_key = 1\n").unwrap();
    let out = bin().args(["sweep", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Train seed colliding with eval seed is a validation error.
    let out = bin()
        .args(["sweep", "--train-seed", "5", "--eval-seed", "5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Unknown task name.
    let out = bin().args(["train", "--task", "haiku"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, smoke_config(dir.path())).unwrap();
    let missing = dir.path().join("nope").join("checkpoint.json");
    let out = bin()
        .args(["eval", "--config"])
        .arg(&cfg)
        .args(["--checkpoint"])
        .arg(&missing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_sweep_eval_pipeline_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, smoke_config(dir.path())).unwrap();

    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("checkpoint.json").exists());
    assert!(dir.path().join("train_history.csv").exists());

    let out = bin().args(["sweep", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("sweep_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 7 + 13);

    let out = bin()
        .args(["eval", "--config"])
        .arg(&cfg)
        .args(["--checkpoint"])
        .arg(dir.path().join("checkpoint.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    for artifact in [
        "eval_report.csv",
        "eval_report.json",
        "eval_schedules.csv",
        "eval_episodes.jsonl",
        "rl_mean.json",
        "rl_freq.json",
    ] {
        assert!(dir.path().join(artifact).exists(), "missing {artifact}");
    }

    let out = bin()
        .args(["ablate", "--config"])
        .arg(&cfg)
        .args(["--axis", "steps"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("ablate_steps.csv")).unwrap();
    // Header plus two methods per K in {30, 60}.
    assert_eq!(csv.lines().count(), 1 + 4);
}
