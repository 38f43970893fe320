//! Exit-code contract: 0 success, 1 usage, 2 partial failure, 3 fatal.

use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_review-arcade"))
}

#[test]
fn usage_error_exits_1() {
    let output = bin().arg("no-such-subcommand").output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    let output = bin().arg("--help").output().unwrap();
    assert_eq!(output.status.code(), Some(0));
}

#[test]
fn missing_config_is_fatal_3() {
    let output = bin()
        .args(["--config", "/nonexistent/config.toml", "summarize"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("error"));
}

#[test]
fn partial_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("corpus/papers/p1")).unwrap();
    fs::write(
        root.join("corpus/manifest.json"),
        r#"[{"id":"p1","split":"accepted","path":"papers/p1"}]"#,
    )
    .unwrap();
    fs::write(root.join("corpus/papers/p1/paper.md"), "body").unwrap();
    fs::write(
        root.join("corpus/papers/p1/reviews.json"),
        r#"[{"scores":{"Overall":3.0}}]"#,
    )
    .unwrap();
    // Never produces parseable review JSON: the single cell becomes a
    // failure record and the stage reports partial success.
    fs::write(
        root.join("mock_script.json"),
        r#"{"entries":[{"text":"not a review"}]}"#,
    )
    .unwrap();
    fs::write(
        root.join("experiment.toml"),
        r#"
[corpus]
root = "corpus"

[backends.mock]
kind = "mock"
name = "mock"
model_name = "mock-model"
script = "mock_script.json"

[review]
backends = ["mock"]
prompts = ["simple"]
n_runs = 1

[output]
dir = "out"
"#,
    )
    .unwrap();
    let output = bin()
        .args([
            "--config",
            root.join("experiment.toml").to_str().unwrap(),
            "review",
        ])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(2),
        "stdout: {} stderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn successful_stage_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("corpus/papers/p1")).unwrap();
    fs::write(
        root.join("corpus/manifest.json"),
        r#"[{"id":"p1","split":"accepted","path":"papers/p1"}]"#,
    )
    .unwrap();
    fs::write(root.join("corpus/papers/p1/paper.md"), "some body text").unwrap();
    fs::write(
        root.join("corpus/papers/p1/reviews.json"),
        r#"[{"scores":{"Overall":3.0}}]"#,
    )
    .unwrap();
    fs::write(
        root.join("mock_script.json"),
        r#"{"entries":[{"text":"{\"Scores\":{\"Overall\":3.5},\"Strengths\":[],\"Weaknesses\":[]}"}]}"#,
    )
    .unwrap();
    fs::write(
        root.join("experiment.toml"),
        r#"
[corpus]
root = "corpus"

[backends.mock]
kind = "mock"
name = "mock"
model_name = "mock-model"
script = "mock_script.json"

[review]
backends = ["mock"]
prompts = ["simple"]
n_runs = 2

[output]
dir = "out"
"#,
    )
    .unwrap();
    let config = root.join("experiment.toml");
    let config = config.to_str().unwrap();
    let review = bin().args(["--config", config, "review"]).output().unwrap();
    assert_eq!(review.status.code(), Some(0));
    let summarize = bin().args(["--config", config, "summarize"]).output().unwrap();
    assert_eq!(summarize.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&summarize.stdout).contains("accepted: 1 papers"));
}

#[test]
fn mock_script_flag_overrides_configured_script() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("corpus/papers/p1")).unwrap();
    fs::write(
        root.join("corpus/manifest.json"),
        r#"[{"id":"p1","split":"accepted","path":"papers/p1"}]"#,
    )
    .unwrap();
    fs::write(root.join("corpus/papers/p1/paper.md"), "body").unwrap();
    fs::write(
        root.join("corpus/papers/p1/reviews.json"),
        r#"[{"scores":{"Overall":3.0}}]"#,
    )
    .unwrap();
    fs::write(
        root.join("replacement.json"),
        r#"{"entries":[{"text":"{\"Scores\":{\"Overall\":4.0},\"Strengths\":[],\"Weaknesses\":[]}"}]}"#,
    )
    .unwrap();
    // The configured script path does not exist; the flag must win.
    fs::write(
        root.join("experiment.toml"),
        r#"
[corpus]
root = "corpus"

[backends.mock]
kind = "mock"
name = "mock"
model_name = "mock-model"
script = "does_not_exist.json"

[review]
backends = ["mock"]
prompts = ["simple"]
n_runs = 1

[output]
dir = "out"
"#,
    )
    .unwrap();
    let output = bin()
        .args([
            "--config",
            root.join("experiment.toml").to_str().unwrap(),
            "--mock-script",
            root.join("replacement.json").to_str().unwrap(),
            "review",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let artifact = fs::read_to_string(root.join("out/reviews/mock__simple.jsonl")).unwrap();
    assert!(artifact.contains("\"Overall\":4.0"));
}
