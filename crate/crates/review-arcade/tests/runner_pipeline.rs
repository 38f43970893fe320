//! Runner-level pipeline tests over synthetic corpora and artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use review_arcade::config::ExperimentConfig;
use review_arcade::prompts::PromptRegistry;
use review_arcade::report::AlignmentRow;
use review_arcade::runner::{ReportFormat, Runner, RunnerError};

fn write_paper(root: &Path, id: &str, body: &str, reviews: &str) {
    let dir = root.join("corpus/papers").join(id);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("paper.md"), body).unwrap();
    fs::write(dir.join("reviews.json"), reviews).unwrap();
}

fn single_review(overall: f64) -> String {
    format!(r#"[{{"scores":{{"Overall":{overall}}},"strengths":["s"],"weaknesses":["w"]}}]"#)
}

/// Four-paper corpus: a1, a2 accepted; r1, r2 rejected.
fn build_corpus(root: &Path) {
    let manifest = r#"[
      {"id":"a1","split":"accepted","path":"papers/a1"},
      {"id":"a2","split":"accepted","path":"papers/a2"},
      {"id":"r1","split":"rejected","path":"papers/r1"},
      {"id":"r2","split":"rejected","path":"papers/r2"}
    ]"#;
    fs::create_dir_all(root.join("corpus")).unwrap();
    fs::write(root.join("corpus/manifest.json"), manifest).unwrap();
    write_paper(root, "a1", "alpha one body", &single_review(3.0));
    write_paper(root, "a2", "alpha two body", &single_review(4.0));
    write_paper(root, "r1", "reject one body", &single_review(2.0));
    write_paper(root, "r2", "reject two body", &single_review(3.0));
}

fn config_with_prompts(root: &Path, prompts: &[&str], n_runs: u32) -> ExperimentConfig {
    let prompt_list = prompts
        .iter()
        .map(|p| format!("\"{p}\""))
        .collect::<Vec<_>>()
        .join(", ");
    let text = format!(
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
prompts = [{prompt_list}]
n_runs = {n_runs}

[output]
dir = "out"
"#
    );
    let _ = root;
    ExperimentConfig::from_toml_str(&text).unwrap()
}

fn runner(root: &Path, config: ExperimentConfig) -> Runner {
    Runner::new(
        config,
        root.to_path_buf(),
        None,
        PromptRegistry::bundled(),
        None,
    )
}

fn stored_review_line(paper: &str, prompt: &str, run: u32, overall: f64) -> String {
    format!(
        r#"{{"paper_id":"{paper}","prompt":"{prompt}","model":"mock-model","run_index":{run},"valid":true,"scores":{{"Overall":{overall:?}}},"strengths":[],"weaknesses":[],"raw_text":""}}"#
    )
}

fn write_artifact(root: &Path, prompt: &str, scores: &[(&str, f64)]) {
    let dir = root.join("out/reviews");
    fs::create_dir_all(&dir).unwrap();
    let lines: Vec<String> = scores
        .iter()
        .map(|(paper, overall)| stored_review_line(paper, prompt, 0, *overall))
        .collect();
    fs::write(
        dir.join(format!("mock__{prompt}.jsonl")),
        format!("{}\n", lines.join("\n")),
    )
    .unwrap();
}

fn find_row<'a>(rows: &'a [AlignmentRow], model: &str, prompt: &str, split: &str) -> &'a AlignmentRow {
    rows.iter()
        .find(|r| r.model == model && r.prompt == prompt && r.split == split)
        .unwrap_or_else(|| panic!("missing row {model}/{prompt}/{split}"))
}

#[test]
fn best_row_selects_higher_combined_r_and_perfect_predictor_has_zero_mae() {
    let dir = tempfile::tempdir().unwrap();
    build_corpus(dir.path());
    // "simple" matches every human exactly: r = +1 on both splits, MAE 0.
    write_artifact(
        dir.path(),
        "simple",
        &[("a1", 3.0), ("a2", 4.0), ("r1", 2.0), ("r2", 3.0)],
    );
    // "acl" anti-correlates on the rejected split: combined r = 0.
    write_artifact(
        dir.path(),
        "acl",
        &[("a1", 3.0), ("a2", 4.0), ("r1", 3.0), ("r2", 2.0)],
    );
    let runner = runner(dir.path(), config_with_prompts(dir.path(), &["simple", "acl"], 1));
    let bundle = runner.build_evaluation().unwrap();

    // Perfect predictor rows.
    for split in ["combined", "accepted", "rejected"] {
        let row = find_row(&bundle.alignment, "mock", "simple", split);
        assert_eq!(row.mae_mean, Some(0.0), "simple {split} MAE");
    }
    // Best selects the prompt with the higher combined best-match r.
    let best = find_row(&bundle.alignment, "mock", "Best(simple)", "combined");
    assert_eq!(best.mae_mean, Some(0.0));
    assert!(
        !bundle
            .alignment
            .iter()
            .any(|r| r.prompt == "Best(acl)"),
        "only one Best row set per model"
    );
    // The anti-correlated prompt lands at combined r 0.
    let acl_combined = find_row(&bundle.alignment, "mock", "acl", "combined");
    assert_eq!(acl_combined.r_mean, Some(0.0));
}

#[test]
fn constant_predictor_prompt_reproduces_baseline_row() {
    let dir = tempfile::tempdir().unwrap();
    build_corpus(dir.path());
    write_artifact(
        dir.path(),
        "simple",
        &[("a1", 2.5), ("a2", 2.5), ("r1", 2.5), ("r2", 2.5)],
    );
    let runner = runner(dir.path(), config_with_prompts(dir.path(), &["simple"], 1));
    let bundle = runner.build_evaluation().unwrap();
    for split in ["combined", "accepted", "rejected"] {
        let model_row = find_row(&bundle.alignment, "mock", "simple", split);
        let baseline_row = find_row(&bundle.alignment, "baseline", "", split);
        assert_eq!(
            model_row.mae_mean, baseline_row.mae_mean,
            "constant-2.5 model must reproduce the baseline MAE on {split}"
        );
    }
}

#[test]
fn unparseable_cell_yields_failure_record() {
    let dir = tempfile::tempdir().unwrap();
    // Two papers; the second paper's acl run2 output never parses.
    let manifest = r#"[
      {"id":"p1","split":"accepted","path":"papers/p1"},
      {"id":"p2","split":"rejected","path":"papers/p2"}
    ]"#;
    fs::create_dir_all(dir.path().join("corpus")).unwrap();
    fs::write(dir.path().join("corpus/manifest.json"), manifest).unwrap();
    write_paper(dir.path(), "p1", "body one", &single_review(3.0));
    write_paper(dir.path(), "p2", "body two", &single_review(2.5));
    let script = serde_json::json!({
        "entries": [
            {"match_tag": "review/p2/acl/run2", "text": "no json at all"},
            {"match_tag": "review/", "text": "{\"Scores\":{\"Overall\":3.0},\"Strengths\":[],\"Weaknesses\":[]}"}
        ]
    });
    fs::write(
        dir.path().join("mock_script.json"),
        serde_json::to_string(&script).unwrap(),
    )
    .unwrap();
    let runner = runner(
        dir.path(),
        config_with_prompts(dir.path(), &["simple", "acl"], 3),
    );
    let summary = runner.cmd_review(None).unwrap();
    // 2 papers x 2 prompts x 3 runs = 12 records, one of them a failure.
    assert_eq!(summary.n_records, 12);
    assert_eq!(summary.n_failures, 1);
    assert!(summary.complete);

    let text = fs::read_to_string(dir.path().join("out/reviews/mock__acl.jsonl")).unwrap();
    let failures: Vec<&str> = text.lines().filter(|l| l.contains("\"valid\":false")).collect();
    assert_eq!(failures.len(), 1);
    assert!(failures[0].contains("\"paper_id\":\"p2\""));
    assert!(failures[0].contains("\"run_index\":2"));
}

#[test]
fn all_invalid_reviews_is_empty_report_error() {
    let dir = tempfile::tempdir().unwrap();
    build_corpus(dir.path());
    let line = r#"{"paper_id":"a1","prompt":"simple","model":"mock-model","run_index":0,"valid":false,"scores":{},"strengths":[],"weaknesses":[],"raw_text":"","failure":"review unparseable after 3 attempts"}"#;
    fs::create_dir_all(dir.path().join("out/reviews")).unwrap();
    fs::write(
        dir.path().join("out/reviews/mock__simple.jsonl"),
        format!("{line}\n"),
    )
    .unwrap();
    let runner = runner(dir.path(), config_with_prompts(dir.path(), &["simple"], 1));
    assert!(matches!(
        runner.build_evaluation(),
        Err(RunnerError::EmptyReport)
    ));
}

#[test]
fn report_without_artifacts_lists_missing_prerequisites() {
    let dir = tempfile::tempdir().unwrap();
    build_corpus(dir.path());
    let runner = runner(dir.path(), config_with_prompts(dir.path(), &["simple"], 1));
    match runner.cmd_report(ReportFormat::Csv) {
        Err(RunnerError::MissingPrerequisites(items)) => {
            assert_eq!(items.len(), 1);
            assert!(items[0].contains("mock__simple.jsonl"));
        }
        other => panic!("expected missing prerequisites, got {other:?}"),
    }
}

#[test]
fn unreachable_backend_preserves_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    build_corpus(dir.path());
    // Every call fails with a scripted transient error: retries exhaust.
    let script = serde_json::json!({"entries": [{"fail": "transient"}]});
    fs::write(
        dir.path().join("mock_script.json"),
        serde_json::to_string(&script).unwrap(),
    )
    .unwrap();
    let runner = runner(dir.path(), config_with_prompts(dir.path(), &["simple"], 1));
    assert!(runner.cmd_review(None).is_err());
    // The artifact file exists (empty) and the stage is marked incomplete.
    assert!(dir.path().join("out/reviews/mock__simple.jsonl").is_file());
    let manifest = fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"complete\": false"));
}

#[test]
fn report_formats_emit_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    build_corpus(dir.path());
    write_artifact(
        dir.path(),
        "simple",
        &[("a1", 3.0), ("a2", 4.0), ("r1", 2.0), ("r2", 3.0)],
    );
    let runner = runner(dir.path(), config_with_prompts(dir.path(), &["simple"], 1));
    let csv_files: Vec<PathBuf> = runner.cmd_report(ReportFormat::Csv).unwrap();
    let names: Vec<String> = csv_files
        .iter()
        .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
        .collect();
    assert_eq!(
        names,
        vec![
            "alignment.csv",
            "consistency.csv",
            "judge_recall.csv",
            "isi_outcomes.csv"
        ]
    );
    let json_files = runner.cmd_report(ReportFormat::Json).unwrap();
    assert_eq!(json_files.len(), 1);
    // Identical artifacts produce byte-identical reports.
    let first = fs::read(&json_files[0]).unwrap();
    runner.cmd_report(ReportFormat::Json).unwrap();
    let second = fs::read(&json_files[0]).unwrap();
    assert_eq!(first, second);
}
