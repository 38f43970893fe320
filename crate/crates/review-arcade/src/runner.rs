//! Stage orchestration: review generation, ISI runs, judge calls, metric
//! evaluation, and report emission, with resumable artifacts under the
//! experiment output directory.
//!
//! Artifact layout:
//!   reviews/<backend>__<prompt>.jsonl      one StoredReview per line
//!   judge/<backend>__<prompt>.jsonl        one StoredVerdict per line
//!   isi/<setting>/<paper>/s_<i>.md         every intermediate body
//!   isi/<setting>/<paper>/reviews.jsonl    in-loop and final reviews
//!   isi/<setting>/<paper>/edits.jsonl      parsed edits per iteration
//!   isi/<setting>/<paper>/trajectory.json  trajectory summary
//!   isi/<setting>/failures.jsonl           aborted trajectories
//!   reports/…                              CSV/JSON/plot-data bundle
//!   manifest.json                          stage completion markers

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{self, MetricError, SplitMetric};
use crate::config::{ConfigError, ExperimentConfig, RunManifest, StageStatus};
use crate::corpus::{
    filter_papers, load_corpus, Corpus, CorpusError, CorpusSummary, LoadOptions, LoadReport,
    Split,
};
use crate::gateway::{Backend, BackendKind, GatewayError, MockScript};
use crate::isi::{
    classify_outcomes, edit_type_frequency, run_isi, IsiError, IsiOptions, Trajectory,
};
use crate::prompts::{IsiSetting, PromptError, PromptRegistry};
use crate::report::{
    round2, round3, AlignmentRow, ConsistencyRow, EditTypeRow, EvaluationBundle, HistogramRow,
    IsiRow, JudgeRow,
};
use crate::review::{generate_review, ReviewError, ReviewRequestParams, StoredReview};
use crate::stats::{self, Sides};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Isi(#[from] IsiError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("io error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("missing prerequisites:\n{}", .0.join("\n"))]
    MissingPrerequisites(Vec<String>),
    #[error("no valid reviews found; nothing to report")]
    EmptyReport,
}

fn io_err(path: &Path, e: std::io::Error) -> RunnerError {
    RunnerError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Outcome of one stage invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSummary {
    pub complete: bool,
    pub n_records: usize,
    pub n_failures: usize,
    /// Backend calls actually issued in this invocation (0 on a no-op rerun).
    pub n_new_calls: usize,
}

/// One judge verdict cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredVerdict {
    pub paper_id: String,
    pub model: String,
    pub prompt: String,
    pub run_index: u32,
    pub human_index: usize,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<alignment::JudgeVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IsiFailure {
    paper_id: String,
    reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Plotdata,
}

pub struct Runner {
    config: ExperimentConfig,
    /// Directory relative paths in the config resolve against.
    base_dir: PathBuf,
    out_dir: PathBuf,
    registry: PromptRegistry,
    mock_script_override: Option<PathBuf>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunnerError> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    // Tolerate a truncated trailing line from an interrupted write.
    Ok(text
        .lines()
        .filter_map(|line| serde_json::from_str(line).ok())
        .collect())
}

fn write_file(path: &Path, content: &str) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, content).map_err(|e| io_err(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), RunnerError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    write_file(path, &out)
}

impl Runner {
    pub fn new(
        config: ExperimentConfig,
        base_dir: PathBuf,
        out_override: Option<PathBuf>,
        registry: PromptRegistry,
        mock_script_override: Option<PathBuf>,
    ) -> Runner {
        let out_dir = out_override.unwrap_or_else(|| {
            let dir = PathBuf::from(&config.output.dir);
            if dir.is_absolute() {
                dir
            } else {
                base_dir.join(dir)
            }
        });
        Runner {
            config,
            base_dir,
            out_dir,
            registry,
            mock_script_override,
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        let path = PathBuf::from(rel);
        if path.is_absolute() {
            path
        } else {
            self.base_dir.join(path)
        }
    }

    /// Load the corpus and apply the token-length filter.
    pub fn load_filtered_corpus(&self) -> Result<(Corpus, LoadReport), RunnerError> {
        let opts = LoadOptions {
            strict: self.config.corpus.strict,
            counter: self.config.corpus.counter()?,
        };
        let (corpus, report) = load_corpus(&self.resolve(&self.config.corpus.root), opts)?;
        let filtered = filter_papers(
            &corpus,
            self.config.corpus.max_tokens,
            self.config.corpus.drop_reviewless,
        );
        Ok((filtered, report))
    }

    fn build_backend(&self, name: &str) -> Result<Backend, RunnerError> {
        let cfg = self
            .config
            .backends
            .get(name)
            .cloned()
            .ok_or_else(|| ConfigError::Invalid(format!("backend '{name}' is not defined")))?;
        match cfg.kind {
            BackendKind::Mock => {
                let script_path = match &self.mock_script_override {
                    Some(path) => path.clone(),
                    None => {
                        let rel = cfg.script.clone().ok_or_else(|| {
                            ConfigError::Invalid(format!("mock backend '{name}' has no script"))
                        })?;
                        self.resolve(&rel)
                    }
                };
                let text = std::fs::read_to_string(&script_path)
                    .map_err(|e| io_err(&script_path, e))?;
                let script = MockScript::from_json(&text)
                    .map_err(|e| ConfigError::Invalid(format!("mock script: {e}")))?;
                Ok(Backend::mock(cfg, script))
            }
            BackendKind::Http => Ok(Backend::http(cfg)?),
        }
    }

    fn reviews_path(&self, backend: &str, prompt: &str) -> PathBuf {
        self.out_dir
            .join("reviews")
            .join(format!("{backend}__{prompt}.jsonl"))
    }

    fn judge_path(&self, backend: &str, prompt: &str) -> PathBuf {
        self.out_dir
            .join("judge")
            .join(format!("{backend}__{prompt}.jsonl"))
    }

    fn isi_setting_dir(&self, setting: IsiSetting) -> PathBuf {
        self.out_dir.join("isi").join(setting.label())
    }

    fn update_manifest(&self, stage: &str, status: StageStatus) -> Result<(), RunnerError> {
        let path = self.out_dir.join("manifest.json");
        let mut manifest = RunManifest::load_or_new(&path, &self.config);
        manifest.stages.insert(stage.to_string(), status);
        manifest
            .artifacts
            .insert("reviews".to_string(), "reviews".to_string());
        manifest
            .artifacts
            .insert("reports".to_string(), "reports".to_string());
        manifest.save(&path).map_err(|e| io_err(&path, e))
    }

    pub fn cmd_summarize(&self) -> Result<(CorpusSummary, LoadReport), RunnerError> {
        let (corpus, report) = self.load_filtered_corpus()?;
        let summary = crate::corpus::summarize(&corpus)?;
        Ok((summary, report))
    }

    /// Generate `n_runs` reviews per (backend, prompt, paper). Completed
    /// cells are skipped on rerun; `limit` stops after that many new backend
    /// cells, leaving the stage resumable.
    pub fn cmd_review(&self, limit: Option<usize>) -> Result<StageSummary, RunnerError> {
        let (corpus, _) = self.load_filtered_corpus()?;
        let review_cfg = &self.config.review;
        let params = ReviewRequestParams {
            n_runs: review_cfg.n_runs,
            temperature: review_cfg.temperature,
            parse_retry_budget: review_cfg.parse_retry_budget,
            snap: review_cfg.snap_scores,
        };
        let mut n_records = 0usize;
        let mut n_failures = 0usize;
        let mut n_new_calls = 0usize;
        let mut complete = true;

        for backend_name in &review_cfg.backends {
            let backend = self.build_backend(backend_name)?;
            for prompt in &review_cfg.prompts {
                let path = self.reviews_path(backend_name, prompt);
                let existing: Vec<StoredReview> = read_jsonl(&path)?;
                let mut cells: BTreeMap<(String, u32), StoredReview> = existing
                    .into_iter()
                    .map(|r| ((r.paper_id.clone(), r.run_index), r))
                    .collect();

                let mut hard_error: Option<RunnerError> = None;
                'cells: for submission in corpus.submissions() {
                    for run in 0..review_cfg.n_runs {
                        let key = (submission.id.clone(), run);
                        if cells.contains_key(&key) {
                            continue;
                        }
                        if limit.is_some_and(|lim| n_new_calls >= lim) {
                            complete = false;
                            break 'cells;
                        }
                        match generate_review(
                            &backend,
                            &self.registry,
                            prompt,
                            submission,
                            run,
                            &params,
                        ) {
                            Ok(review) => {
                                cells.insert(key, StoredReview::from_review(review));
                            }
                            Err(e @ ReviewError::Unparseable { .. }) => {
                                cells.insert(
                                    key,
                                    StoredReview::from_failure(
                                        &submission.id,
                                        prompt,
                                        backend.model_name(),
                                        run,
                                        &e,
                                    ),
                                );
                            }
                            Err(e) => {
                                // Backend unreachable or config problem:
                                // persist what we have, then fail the stage.
                                hard_error = Some(e.into());
                                complete = false;
                                break 'cells;
                            }
                        }
                        n_new_calls += 1;
                    }
                }

                let lines = canonical_cells(&corpus, review_cfg.n_runs, &cells);
                write_jsonl(&path, &lines)?;
                n_records += lines.len();
                n_failures += lines.iter().filter(|r| !r.valid).count();
                if let Some(e) = hard_error {
                    self.update_manifest(
                        "review",
                        StageStatus {
                            complete: false,
                            n_records,
                            n_failures,
                        },
                    )?;
                    return Err(e);
                }
            }
        }
        self.update_manifest(
            "review",
            StageStatus {
                complete,
                n_records,
                n_failures,
            },
        )?;
        Ok(StageSummary {
            complete,
            n_records,
            n_failures,
            n_new_calls,
        })
    }

    /// Run every configured ISI setting over the corpus; one artifact
    /// directory per trajectory, skipped when already present.
    pub fn cmd_isi(&self) -> Result<StageSummary, RunnerError> {
        let (corpus, _) = self.load_filtered_corpus()?;
        let isi_cfg = &self.config.isi;
        let review_name = isi_cfg
            .review_backend
            .clone()
            .unwrap_or_else(|| self.config.review.backends[0].clone());
        let edit_name = isi_cfg.edit_backend.clone().unwrap_or_else(|| review_name.clone());
        let review_backend = self.build_backend(&review_name)?;
        let edit_backend = if edit_name == review_name {
            None
        } else {
            Some(self.build_backend(&edit_name)?)
        };
        let opts = IsiOptions {
            n_iterations: isi_cfg.n_iterations,
            review_prompt: isi_cfg.review_prompt.clone(),
            review_params: ReviewRequestParams {
                n_runs: 1,
                temperature: self.config.review.temperature,
                parse_retry_budget: self.config.review.parse_retry_budget,
                snap: self.config.review.snap_scores,
            },
            fresh_final_review: isi_cfg.fresh_final_review,
            endpoint_runs: isi_cfg.endpoint_runs,
        };

        let mut n_records = 0usize;
        let mut n_failures = 0usize;
        let mut n_new_calls = 0usize;
        for setting_name in &isi_cfg.settings {
            let setting = IsiSetting::parse(setting_name)?;
            let setting_dir = self.isi_setting_dir(setting);
            let failures_path = setting_dir.join("failures.jsonl");
            let mut failures: BTreeMap<String, IsiFailure> = read_jsonl(&failures_path)?
                .into_iter()
                .map(|f: IsiFailure| (f.paper_id.clone(), f))
                .collect();

            for submission in corpus.submissions() {
                let traj_dir = setting_dir.join(&submission.id);
                let traj_path = traj_dir.join("trajectory.json");
                if traj_path.is_file() {
                    n_records += 1;
                    continue;
                }
                if failures.contains_key(&submission.id) {
                    n_failures += 1;
                    continue;
                }
                match run_isi(
                    &review_backend,
                    edit_backend.as_ref().unwrap_or(&review_backend),
                    &self.registry,
                    submission,
                    setting,
                    &opts,
                ) {
                    Ok(trajectory) => {
                        persist_trajectory(&traj_dir, &trajectory)?;
                        n_records += 1;
                        n_new_calls += 1;
                    }
                    Err(
                        e @ (IsiError::InitialReviewFailed { .. }
                        | IsiError::InitialOverallMissing { .. }),
                    ) => {
                        failures.insert(
                            submission.id.clone(),
                            IsiFailure {
                                paper_id: submission.id.clone(),
                                reason: e.to_string(),
                            },
                        );
                        n_failures += 1;
                    }
                    Err(e) => {
                        let ordered = ordered_failures(&corpus, &failures);
                        write_jsonl(&failures_path, &ordered)?;
                        self.update_manifest(
                            "isi",
                            StageStatus {
                                complete: false,
                                n_records,
                                n_failures,
                            },
                        )?;
                        return Err(e.into());
                    }
                }
            }
            let ordered = ordered_failures(&corpus, &failures);
            if !ordered.is_empty() {
                write_jsonl(&failures_path, &ordered)?;
            }
        }
        self.update_manifest(
            "isi",
            StageStatus {
                complete: true,
                n_records,
                n_failures,
            },
        )?;
        Ok(StageSummary {
            complete: true,
            n_records,
            n_failures,
            n_new_calls,
        })
    }

    /// Judge which human-stated strengths/weaknesses each configured review
    /// cell captured. One verdict per (backend, prompt, paper, human review).
    pub fn cmd_judge(&self) -> Result<StageSummary, RunnerError> {
        let (corpus, _) = self.load_filtered_corpus()?;
        let judge_cfg = &self.config.judge;
        let judge_name = judge_cfg
            .backend
            .clone()
            .unwrap_or_else(|| self.config.review.backends[0].clone());
        let judge_backend = self.build_backend(&judge_name)?;
        let run_index = judge_cfg.run_index;

        let mut n_records = 0usize;
        let mut n_failures = 0usize;
        let mut n_new_calls = 0usize;
        for backend_name in &self.config.review.backends {
            for prompt in &self.config.review.prompts {
                let reviews_path = self.reviews_path(backend_name, prompt);
                if !reviews_path.is_file() {
                    return Err(RunnerError::MissingPrerequisites(vec![format!(
                        "review artifacts: {}",
                        reviews_path.display()
                    )]));
                }
                let stored: Vec<StoredReview> = read_jsonl(&reviews_path)?;
                let reviews: BTreeMap<(String, u32), StoredReview> = stored
                    .into_iter()
                    .map(|r| ((r.paper_id.clone(), r.run_index), r))
                    .collect();

                let out_path = self.judge_path(backend_name, prompt);
                let existing: Vec<StoredVerdict> = read_jsonl(&out_path)?;
                let mut cells: BTreeMap<(String, usize), StoredVerdict> = existing
                    .into_iter()
                    .map(|v| ((v.paper_id.clone(), v.human_index), v))
                    .collect();

                let mut hard_error: Option<RunnerError> = None;
                'papers: for submission in corpus.submissions() {
                    let Some(llm) = reviews
                        .get(&(submission.id.clone(), run_index))
                        .and_then(StoredReview::to_review)
                    else {
                        continue;
                    };
                    for (idx, human) in corpus.reviews_for(&submission.id).iter().enumerate() {
                        let key = (submission.id.clone(), idx);
                        if cells.contains_key(&key) {
                            continue;
                        }
                        if human.strengths.is_empty() && human.weaknesses.is_empty() {
                            continue;
                        }
                        let tag = format!(
                            "judge/{backend_name}/{}/{prompt}/run{run_index}/h{idx}",
                            submission.id
                        );
                        let result = alignment::judge_recall(
                            &judge_backend,
                            &self.registry,
                            human,
                            &llm,
                            self.config.review.parse_retry_budget,
                            Some(tag),
                        );
                        n_new_calls += 1;
                        let record = match result {
                            Ok(verdict) => StoredVerdict {
                                paper_id: submission.id.clone(),
                                model: backend_name.clone(),
                                prompt: prompt.clone(),
                                run_index,
                                human_index: idx,
                                valid: true,
                                verdict: Some(verdict),
                                failure: None,
                            },
                            Err(MetricError::Gateway(e)) => {
                                hard_error = Some(RunnerError::Gateway(e));
                                break 'papers;
                            }
                            Err(e) => StoredVerdict {
                                paper_id: submission.id.clone(),
                                model: backend_name.clone(),
                                prompt: prompt.clone(),
                                run_index,
                                human_index: idx,
                                valid: false,
                                verdict: None,
                                failure: Some(e.to_string()),
                            },
                        };
                        cells.insert(key, record);
                    }
                }

                let mut lines = Vec::new();
                for submission in corpus.submissions() {
                    for idx in 0..corpus.reviews_for(&submission.id).len() {
                        if let Some(v) = cells.get(&(submission.id.clone(), idx)) {
                            lines.push(v.clone());
                        }
                    }
                }
                n_records += lines.len();
                n_failures += lines.iter().filter(|v| !v.valid).count();
                write_jsonl(&out_path, &lines)?;
                if let Some(e) = hard_error {
                    self.update_manifest(
                        "judge",
                        StageStatus {
                            complete: false,
                            n_records,
                            n_failures,
                        },
                    )?;
                    return Err(e);
                }
            }
        }
        self.update_manifest(
            "judge",
            StageStatus {
                complete: true,
                n_records,
                n_failures,
            },
        )?;
        Ok(StageSummary {
            complete: true,
            n_records,
            n_failures,
            n_new_calls,
        })
    }

    /// Compute the full evaluation bundle from persisted artifacts.
    pub fn build_evaluation(&self) -> Result<EvaluationBundle, RunnerError> {
        let (corpus, _) = self.load_filtered_corpus()?;
        let evaluation = Evaluation {
            runner: self,
            corpus: &corpus,
        };
        evaluation.build()
    }

    /// Compute metrics and emit every report format.
    pub fn cmd_evaluate(&self) -> Result<EvaluationBundle, RunnerError> {
        let bundle = self.build_evaluation()?;
        self.emit(&bundle, &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Plotdata])?;
        self.update_manifest(
            "evaluate",
            StageStatus {
                complete: true,
                n_records: bundle.alignment.len(),
                n_failures: 0,
            },
        )?;
        Ok(bundle)
    }

    /// Re-emit reports in one format from existing artifacts.
    pub fn cmd_report(&self, format: ReportFormat) -> Result<Vec<PathBuf>, RunnerError> {
        let bundle = self.build_evaluation()?;
        self.emit(&bundle, &[format])
    }

    fn emit(
        &self,
        bundle: &EvaluationBundle,
        formats: &[ReportFormat],
    ) -> Result<Vec<PathBuf>, RunnerError> {
        use crate::report;
        let reports = self.out_dir.join("reports");
        let mut written = Vec::new();
        let mut emit_file = |path: PathBuf, content: String| -> Result<(), RunnerError> {
            write_file(&path, &content)?;
            written.push(path);
            Ok(())
        };
        for format in formats {
            match format {
                ReportFormat::Csv => {
                    emit_file(reports.join("alignment.csv"), report::alignment_csv(&bundle.alignment))?;
                    emit_file(
                        reports.join("consistency.csv"),
                        report::consistency_csv(&bundle.consistency),
                    )?;
                    emit_file(reports.join("judge_recall.csv"), report::judge_csv(&bundle.judge))?;
                    emit_file(reports.join("isi_outcomes.csv"), report::isi_csv(&bundle.isi))?;
                }
                ReportFormat::Json => {
                    emit_file(reports.join("report.json"), report::bundle_json(bundle))?;
                }
                ReportFormat::Plotdata => {
                    let plot = reports.join("plotdata");
                    emit_file(
                        plot.join("length_histogram.csv"),
                        report::histogram_csv(&bundle.histogram),
                    )?;
                    emit_file(
                        plot.join("best_match_bars.csv"),
                        report::best_match_bars_csv(&bundle.alignment),
                    )?;
                    emit_file(plot.join("edit_types.csv"), report::edit_types_csv(&bundle.edit_types))?;
                }
            }
        }
        Ok(written)
    }
}

fn canonical_cells(
    corpus: &Corpus,
    n_runs: u32,
    cells: &BTreeMap<(String, u32), StoredReview>,
) -> Vec<StoredReview> {
    let mut out = Vec::new();
    for submission in corpus.submissions() {
        for run in 0..n_runs {
            if let Some(r) = cells.get(&(submission.id.clone(), run)) {
                out.push(r.clone());
            }
        }
    }
    out
}

fn ordered_failures(corpus: &Corpus, failures: &BTreeMap<String, IsiFailure>) -> Vec<IsiFailure> {
    corpus
        .submissions()
        .iter()
        .filter_map(|s| failures.get(&s.id).cloned())
        .collect()
}

fn persist_trajectory(dir: &Path, trajectory: &Trajectory) -> Result<(), RunnerError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (i, body) in trajectory.bodies.iter().enumerate() {
        write_file(&dir.join(format!("s_{i}.md")), body)?;
    }
    let mut reviews = Vec::new();
    for it in &trajectory.iterations {
        if let Some(review) = &it.review {
            reviews.push(StoredReview::from_review(review.clone()));
        }
    }
    if let Some(final_review) = &trajectory.final_review {
        reviews.push(StoredReview::from_review(final_review.clone()));
    }
    write_jsonl(&dir.join("reviews.jsonl"), &reviews)?;

    #[derive(Serialize)]
    struct EditRecord<'a> {
        index: u32,
        applied: bool,
        edit: &'a crate::isi::EditProposal,
    }
    let edits: Vec<EditRecord> = trajectory
        .iterations
        .iter()
        .filter_map(|it| {
            it.edit.as_ref().map(|edit| EditRecord {
                index: it.index,
                applied: it.applied,
                edit,
            })
        })
        .collect();
    write_jsonl(&dir.join("edits.jsonl"), &edits)?;

    let mut json =
        serde_json::to_string_pretty(trajectory).expect("trajectory serializes");
    json.push('\n');
    write_file(&dir.join("trajectory.json"), &json)
}

/// Mean and population standard deviation of the available values.
fn agg(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    (
        Some(stats::mean(values)),
        Some(stats::population_std(values)),
    )
}

const SPLITS: [(&str, Option<Split>); 3] = [
    ("combined", None),
    ("accepted", Some(Split::Accepted)),
    ("rejected", Some(Split::Rejected)),
];

struct Evaluation<'a> {
    runner: &'a Runner,
    corpus: &'a Corpus,
}

/// Per-run split metrics for one (backend, prompt) cell.
#[derive(Debug, Clone, Default)]
struct CellMetrics {
    /// Per run: (mae, r) per split label.
    mae: BTreeMap<String, Vec<f64>>,
    r: BTreeMap<String, Vec<f64>>,
    excluded: BTreeMap<String, usize>,
}

impl<'a> Evaluation<'a> {
    fn humans_for(&self, split: Option<Split>) -> BTreeMap<String, Vec<f64>> {
        self.corpus
            .submissions()
            .iter()
            .filter(|s| split.is_none_or(|sp| s.split == sp))
            .filter_map(|s| {
                let overalls: Vec<f64> = self
                    .corpus
                    .reviews_for(&s.id)
                    .iter()
                    .map(|r| r.overall())
                    .collect();
                if overalls.is_empty() {
                    None
                } else {
                    Some((s.id.clone(), overalls))
                }
            })
            .collect()
    }

    fn build(&self) -> Result<EvaluationBundle, RunnerError> {
        let config = &self.runner.config;
        let mut bundle = EvaluationBundle {
            config_hash: config.config_hash(),
            ..Default::default()
        };

        let humans_accepted = self.humans_for(Some(Split::Accepted));
        let humans_rejected = self.humans_for(Some(Split::Rejected));

        // Per (backend, prompt) metric cells from review artifacts.
        let mut total_valid_reviews = 0usize;
        let mut missing = Vec::new();
        let mut cell_metrics: BTreeMap<(String, String), CellMetrics> = BTreeMap::new();
        let mut stored_by_cell: BTreeMap<(String, String), Vec<StoredReview>> = BTreeMap::new();
        for backend_name in &config.review.backends {
            for prompt in &config.review.prompts {
                let path = self.runner.reviews_path(backend_name, prompt);
                if !path.is_file() {
                    missing.push(format!("review artifacts: {}", path.display()));
                    continue;
                }
                let stored: Vec<StoredReview> = read_jsonl(&path)?;
                total_valid_reviews += stored.iter().filter(|r| r.valid).count();
                stored_by_cell.insert((backend_name.clone(), prompt.clone()), stored);
            }
        }
        if !missing.is_empty() {
            return Err(RunnerError::MissingPrerequisites(missing));
        }
        if total_valid_reviews == 0 {
            return Err(RunnerError::EmptyReport);
        }

        for ((backend_name, prompt), stored) in &stored_by_cell {
            let metrics = self.cell_metrics(stored, &humans_accepted, &humans_rejected);
            cell_metrics.insert((backend_name.clone(), prompt.clone()), metrics);
        }

        // Alignment rows: per backend, per prompt, then All and Best.
        for backend_name in &config.review.backends {
            let mut per_prompt_combined_r = Vec::new();
            for prompt in &config.review.prompts {
                let metrics = &cell_metrics[&(backend_name.clone(), prompt.clone())];
                for (split_label, split) in SPLITS {
                    bundle.alignment.push(self.alignment_row(
                        backend_name,
                        prompt,
                        split_label,
                        split,
                        metrics,
                    ));
                }
                let (combined_r_mean, _) =
                    agg(metrics.r.get("combined").map(Vec::as_slice).unwrap_or(&[]));
                per_prompt_combined_r.push((prompt.clone(), combined_r_mean));
            }
            // "All": mean ± std across the per-prompt values, each prompt
            // first averaged over its runs.
            for (split_label, split) in SPLITS {
                bundle.alignment.push(self.all_row(
                    backend_name,
                    split_label,
                    split,
                    &cell_metrics,
                ));
            }
            // "Best": the prompt with the highest combined best-match r.
            let best = per_prompt_combined_r
                .iter()
                .filter_map(|(p, r)| r.map(|v| (p.clone(), v)))
                .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite r"));
            if let Some((best_prompt, _)) = best {
                let metrics = &cell_metrics[&(backend_name.clone(), best_prompt.clone())];
                for (split_label, split) in SPLITS {
                    let mut row = self.alignment_row(
                        backend_name,
                        &best_prompt,
                        split_label,
                        split,
                        metrics,
                    );
                    row.prompt = format!("Best({best_prompt})");
                    bundle.alignment.push(row);
                }
            }
        }

        self.human_rows(&mut bundle, &humans_accepted, &humans_rejected);
        self.baseline_rows(&mut bundle, &humans_accepted, &humans_rejected);
        self.consistency_rows(&mut bundle, &stored_by_cell);
        self.judge_rows(&mut bundle)?;
        self.isi_rows(&mut bundle)?;

        let summary = crate::corpus::summarize(self.corpus)?;
        let hist = &summary.length_histogram;
        for i in 0..hist.accepted.len() {
            bundle.histogram.push(HistogramRow {
                bin_center: hist.bin_min + hist.bin_width * (i as f64 + 0.5),
                accepted: hist.accepted[i],
                rejected: hist.rejected[i],
            });
        }

        bundle.notes = self.notes();
        Ok(bundle)
    }

    fn notes(&self) -> Vec<String> {
        let metrics = &self.runner.config.metrics;
        let sidedness = if metrics.one_sided {
            "Paired t-tests are one-sided (testing for score increases)."
        } else {
            "Paired t-tests are two-sided; use --one-sided to test for score increases only."
        };
        vec![
            sidedness.to_string(),
            format!(
                "The constant baseline predicts {} (metrics.baseline_constant); the arithmetic mid-point of the 1-5 half-step scale is 3.0.",
                metrics.baseline_constant
            ),
            "No normality or homoskedasticity checks are applied to paired-test inputs, and no multiple-comparison correction is applied.".to_string(),
            "Invalid reviews (unparseable output or missing Overall) are excluded per metric; n_excluded counts excluded (paper, run) cells.".to_string(),
        ]
    }

    /// Per-run MAE and best-match r for one artifact file, per split.
    fn cell_metrics(
        &self,
        stored: &[StoredReview],
        humans_accepted: &BTreeMap<String, Vec<f64>>,
        humans_rejected: &BTreeMap<String, Vec<f64>>,
    ) -> CellMetrics {
        let n_runs = self.runner.config.review.n_runs;
        let mut metrics = CellMetrics::default();
        for run in 0..n_runs {
            let run_metrics = |split: Split, humans: &BTreeMap<String, Vec<f64>>| {
                let llm: BTreeMap<String, f64> = stored
                    .iter()
                    .filter(|r| r.valid && r.run_index == run)
                    .filter(|r| {
                        self.corpus
                            .get(&r.paper_id)
                            .is_some_and(|s| s.split == split)
                    })
                    .filter_map(|r| {
                        r.to_review()
                            .and_then(|rev| rev.overall())
                            .map(|o| (r.paper_id.clone(), o))
                    })
                    .collect();
                let contributing = llm.keys().filter(|p| humans.contains_key(*p)).count();
                let excluded_cells = (humans.len() - contributing)
                    + llm.keys().filter(|p| !humans.contains_key(*p)).count();
                let mae = alignment::mae_vs_human_mean(&llm, humans)
                    .ok()
                    .map(|(m, _)| m);
                let pairs = alignment::best_match_pairs(&llm, humans);
                let r = alignment::best_match_pearson(&pairs).ok();
                (mae, r, excluded_cells)
            };
            let (mae_a, r_a, excl_a) = run_metrics(Split::Accepted, humans_accepted);
            let (mae_r, r_r, excl_r) = run_metrics(Split::Rejected, humans_rejected);
            for (label, mae, r, excl) in [
                ("accepted", mae_a, r_a, excl_a),
                ("rejected", mae_r, r_r, excl_r),
            ] {
                if let Some(m) = mae {
                    metrics.mae.entry(label.to_string()).or_default().push(m);
                }
                if let Some(v) = r {
                    metrics.r.entry(label.to_string()).or_default().push(v);
                }
                *metrics.excluded.entry(label.to_string()).or_insert(0) += excl;
            }
            // Combined split: macro average; Fisher-z space for r.
            if let (Some(ma), Some(mr)) = (mae_a, mae_r) {
                metrics
                    .mae
                    .entry("combined".to_string())
                    .or_default()
                    .push((ma + mr) / 2.0);
            }
            if let (Some(ra), Some(rr)) = (r_a, r_r) {
                if let Ok((_, r_comb, _)) = alignment::macro_combine(
                    SplitMetric { mae: 0.0, r: ra, n: 0 },
                    SplitMetric { mae: 0.0, r: rr, n: 0 },
                ) {
                    metrics
                        .r
                        .entry("combined".to_string())
                        .or_default()
                        .push(r_comb);
                }
            }
            *metrics.excluded.entry("combined".to_string()).or_insert(0) += excl_a + excl_r;
        }
        metrics
    }

    fn eligible(&self, split: Option<Split>) -> usize {
        self.humans_for(split).len()
    }

    #[allow(clippy::too_many_arguments)]
    fn alignment_row(
        &self,
        model: &str,
        prompt: &str,
        split_label: &str,
        split: Option<Split>,
        metrics: &CellMetrics,
    ) -> AlignmentRow {
        let empty: Vec<f64> = Vec::new();
        let maes = metrics.mae.get(split_label).unwrap_or(&empty);
        let rs = metrics.r.get(split_label).unwrap_or(&empty);
        let (mae_mean, mae_std) = agg(maes);
        let (r_mean, r_std) = agg(rs);
        AlignmentRow {
            model: model.to_string(),
            prompt: prompt.to_string(),
            split: split_label.to_string(),
            mae_mean: mae_mean.map(round2),
            mae_std: mae_std.map(round2),
            r_mean: r_mean.map(round3),
            r_std: r_std.map(round3),
            n_papers: self.eligible(split),
            n_excluded: *metrics.excluded.get(split_label).unwrap_or(&0),
        }
    }

    fn all_row(
        &self,
        backend_name: &str,
        split_label: &str,
        split: Option<Split>,
        cell_metrics: &BTreeMap<(String, String), CellMetrics>,
    ) -> AlignmentRow {
        let config = &self.runner.config;
        let mut prompt_maes = Vec::new();
        let mut prompt_rs = Vec::new();
        let mut excluded = 0usize;
        for prompt in &config.review.prompts {
            let metrics = &cell_metrics[&(backend_name.to_string(), prompt.clone())];
            if let (Some(m), _) = agg(metrics.mae.get(split_label).map(Vec::as_slice).unwrap_or(&[])) {
                prompt_maes.push(m);
            }
            if let (Some(r), _) = agg(metrics.r.get(split_label).map(Vec::as_slice).unwrap_or(&[])) {
                prompt_rs.push(r);
            }
            excluded += metrics.excluded.get(split_label).unwrap_or(&0);
        }
        let (mae_mean, mae_std) = agg(&prompt_maes);
        let (r_mean, r_std) = agg(&prompt_rs);
        AlignmentRow {
            model: backend_name.to_string(),
            prompt: "All".to_string(),
            split: split_label.to_string(),
            mae_mean: mae_mean.map(round2),
            mae_std: mae_std.map(round2),
            r_mean: r_mean.map(round3),
            r_std: r_std.map(round3),
            n_papers: self.eligible(split),
            n_excluded: excluded,
        }
    }

    fn human_rows(
        &self,
        bundle: &mut EvaluationBundle,
        humans_accepted: &BTreeMap<String, Vec<f64>>,
        humans_rejected: &BTreeMap<String, Vec<f64>>,
    ) {
        let acc = alignment::human_human_alignment(humans_accepted).ok();
        let rej = alignment::human_human_alignment(humans_rejected).ok();
        let combined = match (acc, rej) {
            (Some((mae_a, r_a, n_a)), Some((mae_r, r_r, n_r))) => alignment::macro_combine(
                SplitMetric { mae: mae_a, r: r_a, n: n_a },
                SplitMetric { mae: mae_r, r: r_r, n: n_r },
            )
            .ok()
            .map(|(mae, r, _)| (mae, r, n_a + n_r)),
            _ => None,
        };
        let multi = |humans: &BTreeMap<String, Vec<f64>>| {
            humans.values().filter(|v| v.len() >= 2).count()
        };
        let excluded_acc = humans_accepted.len() - multi(humans_accepted);
        let excluded_rej = humans_rejected.len() - multi(humans_rejected);
        for (split_label, result, excluded) in [
            ("combined", combined, excluded_acc + excluded_rej),
            ("accepted", acc, excluded_acc),
            ("rejected", rej, excluded_rej),
        ] {
            let row = match result {
                Some((mae, r, n)) => AlignmentRow {
                    model: "human".to_string(),
                    prompt: String::new(),
                    split: split_label.to_string(),
                    mae_mean: Some(round2(mae)),
                    mae_std: None,
                    r_mean: Some(round3(r)),
                    r_std: None,
                    n_papers: n,
                    n_excluded: excluded,
                },
                None => AlignmentRow {
                    model: "human".to_string(),
                    prompt: String::new(),
                    split: split_label.to_string(),
                    n_excluded: excluded,
                    ..Default::default()
                },
            };
            bundle.alignment.push(row);
        }
    }

    fn baseline_rows(
        &self,
        bundle: &mut EvaluationBundle,
        humans_accepted: &BTreeMap<String, Vec<f64>>,
        humans_rejected: &BTreeMap<String, Vec<f64>>,
    ) {
        let constant = self.runner.config.metrics.baseline_constant;
        let mae_for = |humans: &BTreeMap<String, Vec<f64>>| {
            let llm: BTreeMap<String, f64> =
                humans.keys().map(|p| (p.clone(), constant)).collect();
            alignment::mae_vs_human_mean(&llm, humans).ok().map(|(m, _)| m)
        };
        let mae_a = mae_for(humans_accepted);
        let mae_r = mae_for(humans_rejected);
        let mae_combined = match (mae_a, mae_r) {
            (Some(a), Some(r)) => Some((a + r) / 2.0),
            _ => None,
        };
        for (split_label, mae, n) in [
            ("combined", mae_combined, humans_accepted.len() + humans_rejected.len()),
            ("accepted", mae_a, humans_accepted.len()),
            ("rejected", mae_r, humans_rejected.len()),
        ] {
            bundle.alignment.push(AlignmentRow {
                model: "baseline".to_string(),
                prompt: String::new(),
                split: split_label.to_string(),
                mae_mean: mae.map(round2),
                mae_std: None,
                r_mean: None,
                r_std: None,
                n_papers: n,
                n_excluded: 0,
            });
        }
    }

    fn consistency_rows(
        &self,
        bundle: &mut EvaluationBundle,
        stored_by_cell: &BTreeMap<(String, String), Vec<StoredReview>>,
    ) {
        let config = &self.runner.config;
        // Pooled instances for the Total row, keyed (backend, prompt, paper).
        let mut total_runs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut total_split: BTreeMap<String, Split> = BTreeMap::new();

        for backend_name in &config.review.backends {
            for prompt in &config.review.prompts {
                let stored = &stored_by_cell[&(backend_name.clone(), prompt.clone())];
                let mut runs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                for r in stored.iter().filter(|r| r.valid) {
                    if let Some(overall) = r.to_review().and_then(|rev| rev.overall()) {
                        runs.entry(r.paper_id.clone()).or_default().push(overall);
                        let key = format!("{backend_name}\u{1f}{prompt}\u{1f}{}", r.paper_id);
                        total_runs.entry(key.clone()).or_default().push(overall);
                        if let Some(s) = self.corpus.get(&r.paper_id) {
                            total_split.insert(key, s.split);
                        }
                    }
                }
                for (split_label, split) in SPLITS {
                    let filtered: BTreeMap<String, Vec<f64>> = runs
                        .iter()
                        .filter(|(paper, _)| {
                            split.is_none_or(|sp| {
                                self.corpus.get(paper).is_some_and(|s| s.split == sp)
                            })
                        })
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .collect();
                    let row = match alignment::consistency(&filtered) {
                        Ok(report) => ConsistencyRow {
                            model: backend_name.clone(),
                            prompt: prompt.clone(),
                            split: split_label.to_string(),
                            pct_inconsistent: round2(report.pct_inconsistent),
                            pct_delta_gt_half: round2(report.pct_delta_gt_half),
                            n_papers: report.n_papers,
                            n_excluded: report.n_excluded,
                        },
                        Err(_) => ConsistencyRow {
                            model: backend_name.clone(),
                            prompt: prompt.clone(),
                            split: split_label.to_string(),
                            pct_inconsistent: 0.0,
                            pct_delta_gt_half: 0.0,
                            n_papers: 0,
                            n_excluded: filtered.len(),
                        },
                    };
                    bundle.consistency.push(row);
                }
            }
        }

        // Micro-averaged Total over every (backend, prompt, paper) instance.
        for (split_label, split) in SPLITS {
            let filtered: BTreeMap<String, Vec<f64>> = total_runs
                .iter()
                .filter(|(key, _)| {
                    split.is_none_or(|sp| total_split.get(*key) == Some(&sp))
                })
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            if let Ok(report) = alignment::consistency(&filtered) {
                bundle.consistency.push(ConsistencyRow {
                    model: "Total".to_string(),
                    prompt: String::new(),
                    split: split_label.to_string(),
                    pct_inconsistent: round2(report.pct_inconsistent),
                    pct_delta_gt_half: round2(report.pct_delta_gt_half),
                    n_papers: report.n_papers,
                    n_excluded: report.n_excluded,
                });
            }
        }
    }

    fn judge_rows(&self, bundle: &mut EvaluationBundle) -> Result<(), RunnerError> {
        let config = &self.runner.config;
        for backend_name in &config.review.backends {
            for prompt in &config.review.prompts {
                let path = self.runner.judge_path(backend_name, prompt);
                if !path.is_file() {
                    continue;
                }
                let verdicts: Vec<StoredVerdict> = read_jsonl(&path)?;
                for (split_label, split) in SPLITS {
                    let in_split: Vec<&StoredVerdict> = verdicts
                        .iter()
                        .filter(|v| v.valid)
                        .filter(|v| {
                            split.is_none_or(|sp| {
                                self.corpus.get(&v.paper_id).is_some_and(|s| s.split == sp)
                            })
                        })
                        .collect();
                    if in_split.is_empty() {
                        continue;
                    }
                    let s_values: Vec<f64> = in_split
                        .iter()
                        .filter_map(|v| v.verdict.as_ref().and_then(|j| j.s_recall()))
                        .collect();
                    let w_values: Vec<f64> = in_split
                        .iter()
                        .filter_map(|v| v.verdict.as_ref().and_then(|j| j.w_recall()))
                        .collect();
                    bundle.judge.push(JudgeRow {
                        model: backend_name.clone(),
                        prompt: prompt.clone(),
                        split: split_label.to_string(),
                        s_recall: agg(&s_values).0.map(round3),
                        w_recall: agg(&w_values).0.map(round3),
                        n_verdicts: in_split.len(),
                    });
                }
            }
        }
        Ok(())
    }

    fn isi_rows(&self, bundle: &mut EvaluationBundle) -> Result<(), RunnerError> {
        let config = &self.runner.config;
        let sides = if config.metrics.one_sided {
            Sides::Greater
        } else {
            Sides::Two
        };
        for setting_name in &config.isi.settings {
            let setting = IsiSetting::parse(setting_name)?;
            let setting_dir = self.runner.isi_setting_dir(setting);
            let mut trajectories: Vec<Trajectory> = Vec::new();
            for submission in self.corpus.submissions() {
                let path = setting_dir.join(&submission.id).join("trajectory.json");
                if !path.is_file() {
                    continue;
                }
                let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                if let Ok(t) = serde_json::from_str::<Trajectory>(&text) {
                    trajectories.push(t);
                }
            }
            if trajectories.is_empty() {
                continue;
            }
            for (split_label, split) in SPLITS {
                let selected: Vec<&Trajectory> = trajectories
                    .iter()
                    .filter(|t| split.is_none_or(|sp| t.split == sp))
                    .collect();
                if selected.is_empty() {
                    continue;
                }
                let breakdown = classify_outcomes(&selected)?;
                let test = stats::paired_t_test(&breakdown.before, &breakdown.after, sides).ok();
                bundle.isi.push(IsiRow {
                    setting: setting_name.clone(),
                    split: split_label.to_string(),
                    n: breakdown.n,
                    worse_pct: round2(breakdown.worse_pct),
                    equal_pct: round2(breakdown.equal_pct),
                    better_pct: round2(breakdown.better_pct),
                    t: test.map(|t| round3(t.t)),
                    p: test.map(|t| round3(t.p)),
                    d: test.map(|t| round3(t.d)),
                });
            }
            let selected: Vec<&Trajectory> = trajectories.iter().collect();
            for (action, count) in edit_type_frequency(&selected) {
                bundle.edit_types.push(EditTypeRow {
                    setting: setting_name.clone(),
                    action,
                    count,
                });
            }
        }
        Ok(())
    }
}
