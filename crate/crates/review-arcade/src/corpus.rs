//! Loading, validation, filtering, and summarizing of the paper-plus-reviews
//! dataset.
//!
//! On-disk layout: a top-level `manifest.json` (array of `{id, split, path}`)
//! where each `path` is a directory containing `paper.md` and `reviews.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HISTOGRAM_BINS: usize = 30;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed {what}: {message}")]
    Malformed { what: String, message: String },
    #[error("missing body file for paper '{0}'")]
    MissingBody(String),
    #[error("empty body for paper '{0}'")]
    EmptyBody(String),
    #[error("duplicate paper id '{0}'")]
    DuplicateId(String),
    #[error("review for '{paper}' has off-grid score {key}={value}")]
    OffGridScore {
        paper: String,
        key: String,
        value: f64,
    },
    #[error("review for '{paper}' is missing the Overall score")]
    MissingOverall { paper: String },
    #[error("corpus is empty")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Accepted,
    Rejected,
}

impl Split {
    pub fn label(&self) -> &'static str {
        match self {
            Split::Accepted => "accepted",
            Split::Rejected => "rejected",
        }
    }
}

/// How body text is converted to a token count.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TokenCounter {
    /// Whitespace-separated tokens.
    #[default]
    Whitespace,
    /// Whitespace count scaled by a subword-approximation multiplier,
    /// rounded up.
    SubwordApprox { multiplier: f64 },
}

impl TokenCounter {
    pub fn count(&self, body: &str) -> usize {
        let ws = body.split_whitespace().count();
        match self {
            TokenCounter::Whitespace => ws,
            TokenCounter::SubwordApprox { multiplier } => {
                (ws as f64 * multiplier).ceil() as usize
            }
        }
    }
}

/// One paper: Markdown body plus its split label and token count.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub id: String,
    pub split: Split,
    pub body: String,
    pub token_count: usize,
    pub metadata: BTreeMap<String, String>,
}

/// A human review: per-dimension half-point scores plus strengths and
/// weaknesses bullet lists.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanReview {
    pub paper_id: String,
    pub scores: BTreeMap<String, f64>,
    pub strengths: Vec<String>,
    pub weaknesses: Vec<String>,
}

impl HumanReview {
    pub fn overall(&self) -> f64 {
        self.scores["Overall"]
    }
}

/// Returns true when `v` lies in [1, 5] on the half-point grid.
pub fn on_half_point_grid(v: f64) -> bool {
    if !(1.0..=5.0).contains(&v) {
        return false;
    }
    let doubled = v * 2.0;
    (doubled - doubled.round()).abs() < 1e-9
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    /// (paper id or manifest path, reason) for papers skipped entirely.
    pub rejected_papers: Vec<(String, String)>,
    /// (paper id, reason) for individual review records skipped.
    pub rejected_reviews: Vec<(String, String)>,
    /// Papers that loaded with zero human reviews.
    pub reviewless: Vec<String>,
}

impl LoadReport {
    pub fn is_clean(&self) -> bool {
        self.rejected_papers.is_empty() && self.rejected_reviews.is_empty()
    }
}

/// An immutable, loaded dataset. Submissions keep manifest order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    submissions: Vec<Submission>,
    reviews: BTreeMap<String, Vec<HumanReview>>,
}

impl Corpus {
    pub fn new(submissions: Vec<Submission>, reviews: BTreeMap<String, Vec<HumanReview>>) -> Self {
        Corpus {
            submissions,
            reviews,
        }
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.submissions
    }

    pub fn get(&self, id: &str) -> Option<&Submission> {
        self.submissions.iter().find(|s| s.id == id)
    }

    pub fn reviews_for(&self, id: &str) -> &[HumanReview] {
        self.reviews.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn n_reviews(&self) -> usize {
        self.reviews.values().map(Vec::len).sum()
    }

    pub fn len(&self) -> usize {
        self.submissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.submissions.is_empty()
    }

    pub fn split_members(&self, split: Split) -> impl Iterator<Item = &Submission> {
        self.submissions.iter().filter(move |s| s.split == split)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    split: Split,
    path: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReviewRecord {
    scores: BTreeMap<String, f64>,
    #[serde(default)]
    strengths: Vec<String>,
    #[serde(default)]
    weaknesses: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Abort on the first bad record instead of rejecting it and continuing.
    pub strict: bool,
    pub counter: TokenCounter,
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load every paper and review under `root`, computing token counts on the
/// way in. In lenient mode bad records are rejected into the report; in
/// strict mode the first bad record aborts the load.
pub fn load_corpus(root: &Path, opts: LoadOptions) -> Result<(Corpus, LoadReport), CorpusError> {
    let manifest_path = root.join("manifest.json");
    let manifest: Vec<ManifestEntry> =
        serde_json::from_str(&read_to_string(&manifest_path)?).map_err(|e| {
            CorpusError::Malformed {
                what: manifest_path.display().to_string(),
                message: e.to_string(),
            }
        })?;

    let mut report = LoadReport::default();
    let mut submissions = Vec::new();
    let mut reviews: BTreeMap<String, Vec<HumanReview>> = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();

    for entry in manifest {
        match load_paper(root, &entry, &opts, &mut report) {
            Ok(Some((submission, paper_reviews))) => {
                if !seen.insert(submission.id.clone()) {
                    let err = CorpusError::DuplicateId(submission.id.clone());
                    if opts.strict {
                        return Err(err);
                    }
                    report
                        .rejected_papers
                        .push((submission.id.clone(), err.to_string()));
                    continue;
                }
                if paper_reviews.is_empty() {
                    report.reviewless.push(submission.id.clone());
                }
                reviews.insert(submission.id.clone(), paper_reviews);
                submissions.push(submission);
            }
            Ok(None) => {}
            Err(e) => return Err(e),
        }
    }

    Ok((Corpus::new(submissions, reviews), report))
}

fn load_paper(
    root: &Path,
    entry: &ManifestEntry,
    opts: &LoadOptions,
    report: &mut LoadReport,
) -> Result<Option<(Submission, Vec<HumanReview>)>, CorpusError> {
    let dir = root.join(&entry.path);
    let body_path = dir.join("paper.md");
    if !body_path.is_file() {
        let err = CorpusError::MissingBody(entry.id.clone());
        if opts.strict {
            return Err(err);
        }
        report.rejected_papers.push((entry.id.clone(), err.to_string()));
        return Ok(None);
    }
    let body = read_to_string(&body_path)?;
    if body.is_empty() {
        let err = CorpusError::EmptyBody(entry.id.clone());
        if opts.strict {
            return Err(err);
        }
        report.rejected_papers.push((entry.id.clone(), err.to_string()));
        return Ok(None);
    }

    let mut paper_reviews = Vec::new();
    let reviews_path = dir.join("reviews.json");
    if reviews_path.is_file() {
        let raw = read_to_string(&reviews_path)?;
        let records: Vec<serde_json::Value> =
            serde_json::from_str(&raw).map_err(|e| CorpusError::Malformed {
                what: reviews_path.display().to_string(),
                message: e.to_string(),
            })?;
        for value in records {
            match parse_review(&entry.id, value) {
                Ok(review) => paper_reviews.push(review),
                Err(err) => {
                    if opts.strict {
                        return Err(err);
                    }
                    report
                        .rejected_reviews
                        .push((entry.id.clone(), err.to_string()));
                }
            }
        }
    }

    let token_count = opts.counter.count(&body);
    Ok(Some((
        Submission {
            id: entry.id.clone(),
            split: entry.split,
            body,
            token_count,
            metadata: entry.metadata.clone(),
        },
        paper_reviews,
    )))
}

fn parse_review(paper_id: &str, value: serde_json::Value) -> Result<HumanReview, CorpusError> {
    let record: ReviewRecord =
        serde_json::from_value(value).map_err(|e| CorpusError::Malformed {
            what: format!("review record for '{paper_id}'"),
            message: e.to_string(),
        })?;
    if !record.scores.contains_key("Overall") {
        return Err(CorpusError::MissingOverall {
            paper: paper_id.to_string(),
        });
    }
    for (key, &v) in &record.scores {
        if !on_half_point_grid(v) {
            return Err(CorpusError::OffGridScore {
                paper: paper_id.to_string(),
                key: key.clone(),
                value: v,
            });
        }
    }
    Ok(HumanReview {
        paper_id: paper_id.to_string(),
        scores: record.scores,
        strengths: record.strengths,
        weaknesses: record.weaknesses,
    })
}

/// Write `corpus` back out in the same layout `load_corpus` reads.
pub fn save_corpus(corpus: &Corpus, root: &Path) -> Result<(), CorpusError> {
    let io_err = |path: &Path, source: std::io::Error| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let mut manifest = Vec::new();
    for submission in corpus.submissions() {
        let rel = format!("papers/{}", submission.id);
        let dir = root.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let body_path = dir.join("paper.md");
        fs::write(&body_path, &submission.body).map_err(|e| io_err(&body_path, e))?;
        let records: Vec<ReviewRecord> = corpus
            .reviews_for(&submission.id)
            .iter()
            .map(|r| ReviewRecord {
                scores: r.scores.clone(),
                strengths: r.strengths.clone(),
                weaknesses: r.weaknesses.clone(),
            })
            .collect();
        let reviews_path = dir.join("reviews.json");
        let json = serde_json::to_string_pretty(&records).expect("review records serialize");
        fs::write(&reviews_path, json).map_err(|e| io_err(&reviews_path, e))?;
        manifest.push(ManifestEntry {
            id: submission.id.clone(),
            split: submission.split,
            path: rel,
            metadata: submission.metadata.clone(),
        });
    }
    let manifest_path = root.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;
    Ok(())
}

/// Keep only submissions with `token_count <= max_tokens`; with
/// `drop_reviewless` set, also drop papers with an empty body or no reviews.
pub fn filter_papers(corpus: &Corpus, max_tokens: usize, drop_reviewless: bool) -> Corpus {
    let submissions: Vec<Submission> = corpus
        .submissions()
        .iter()
        .filter(|s| s.token_count <= max_tokens)
        .filter(|s| {
            !drop_reviewless || (!s.body.is_empty() && !corpus.reviews_for(&s.id).is_empty())
        })
        .cloned()
        .collect();
    let reviews = submissions
        .iter()
        .map(|s| (s.id.clone(), corpus.reviews_for(&s.id).to_vec()))
        .collect();
    Corpus::new(submissions, reviews)
}

/// Per-split length histogram over 30 equal-width bins with shared edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthHistogram {
    pub bin_min: f64,
    pub bin_width: f64,
    pub accepted: Vec<u32>,
    pub rejected: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitStats {
    pub n_papers: usize,
    pub reviews_per_paper_mean: f64,
    /// Population standard deviation of the per-paper review counts.
    pub reviews_per_paper_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub accepted: SplitStats,
    pub rejected: SplitStats,
    pub length_histogram: LengthHistogram,
}

fn split_stats(corpus: &Corpus, split: Split) -> SplitStats {
    let counts: Vec<f64> = corpus
        .split_members(split)
        .map(|s| corpus.reviews_for(&s.id).len() as f64)
        .collect();
    if counts.is_empty() {
        return SplitStats {
            n_papers: 0,
            reviews_per_paper_mean: 0.0,
            reviews_per_paper_std: 0.0,
        };
    }
    SplitStats {
        n_papers: counts.len(),
        reviews_per_paper_mean: crate::stats::mean(&counts),
        reviews_per_paper_std: crate::stats::population_std(&counts),
    }
}

/// Summarize split sizes, review-count statistics, and the token-length
/// histogram of a non-empty corpus.
pub fn summarize(corpus: &Corpus) -> Result<CorpusSummary, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let min = corpus
        .submissions()
        .iter()
        .map(|s| s.token_count)
        .min()
        .unwrap() as f64;
    let max = corpus
        .submissions()
        .iter()
        .map(|s| s.token_count)
        .max()
        .unwrap() as f64;
    let width = (max - min) / HISTOGRAM_BINS as f64;
    let mut accepted = vec![0u32; HISTOGRAM_BINS];
    let mut rejected = vec![0u32; HISTOGRAM_BINS];
    for s in corpus.submissions() {
        let idx = if width == 0.0 {
            0
        } else {
            // The max value lands in the last bin rather than one past it.
            (((s.token_count as f64 - min) / width) as usize).min(HISTOGRAM_BINS - 1)
        };
        match s.split {
            Split::Accepted => accepted[idx] += 1,
            Split::Rejected => rejected[idx] += 1,
        }
    }
    Ok(CorpusSummary {
        accepted: split_stats(corpus, Split::Accepted),
        rejected: split_stats(corpus, Split::Rejected),
        length_histogram: LengthHistogram {
            bin_min: min,
            bin_width: width,
            accepted,
            rejected,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_paper(root: &Path, id: &str, _split: &str, body: &str, reviews_json: &str) {
        let dir = root.join("papers").join(id);
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("paper.md"), body).unwrap();
        fs::write(dir.join("reviews.json"), reviews_json).unwrap();
    }

    fn manifest_line(id: &str, split: &str) -> String {
        format!(r#"{{"id":"{id}","split":"{split}","path":"papers/{id}"}}"#)
    }

    fn build_fixture(root: &Path, entries: &[(&str, &str, &str, &str)]) {
        let manifest: Vec<String> = entries
            .iter()
            .map(|(id, split, _, _)| manifest_line(id, split))
            .collect();
        fs::write(
            root.join("manifest.json"),
            format!("[{}]", manifest.join(",")),
        )
        .unwrap();
        for (id, split, body, reviews) in entries {
            write_paper(root, id, split, body, reviews);
        }
    }

    const REVIEW_3: &str = r#"[{"scores":{"Overall":3.0},"strengths":["s"],"weaknesses":["w"]}]"#;

    #[test]
    fn loads_papers_and_reviews() {
        let tmp = tempfile::tempdir().unwrap();
        build_fixture(
            tmp.path(),
            &[
                ("p1", "accepted", "alpha beta gamma", REVIEW_3),
                (
                    "p2",
                    "rejected",
                    "delta",
                    r#"[{"scores":{"Overall":2.0}},{"scores":{"Overall":4.5}}]"#,
                ),
            ],
        );
        let (corpus, report) = load_corpus(tmp.path(), LoadOptions::default()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.n_reviews(), 3);
        assert!(report.is_clean());
        assert_eq!(corpus.get("p1").unwrap().token_count, 3);
    }

    #[test]
    fn off_grid_score_rejected_with_report() {
        let tmp = tempfile::tempdir().unwrap();
        build_fixture(
            tmp.path(),
            &[(
                "p1",
                "accepted",
                "body",
                r#"[{"scores":{"Overall":3.25}}]"#,
            )],
        );
        let (corpus, report) = load_corpus(tmp.path(), LoadOptions::default()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.n_reviews(), 0);
        assert_eq!(report.rejected_reviews.len(), 1);
        assert!(report.rejected_reviews[0].1.contains("off-grid"));
        // The paper survives but is flagged reviewless.
        assert_eq!(report.reviewless, vec!["p1".to_string()]);
    }

    #[test]
    fn strict_mode_aborts_on_off_grid_score() {
        let tmp = tempfile::tempdir().unwrap();
        build_fixture(
            tmp.path(),
            &[("p1", "accepted", "body", r#"[{"scores":{"Overall":3.25}}]"#)],
        );
        let opts = LoadOptions {
            strict: true,
            ..Default::default()
        };
        assert!(matches!(
            load_corpus(tmp.path(), opts),
            Err(CorpusError::OffGridScore { .. })
        ));
    }

    #[test]
    fn zero_review_paper_loads_flagged() {
        let tmp = tempfile::tempdir().unwrap();
        build_fixture(tmp.path(), &[("p1", "rejected", "body", "[]")]);
        let (corpus, report) = load_corpus(tmp.path(), LoadOptions::default()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(report.reviewless, vec!["p1".to_string()]);
    }

    #[test]
    fn duplicate_id_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = format!(
            "[{},{}]",
            manifest_line("p1", "accepted"),
            manifest_line("p1", "accepted")
        );
        fs::write(tmp.path().join("manifest.json"), manifest).unwrap();
        write_paper(tmp.path(), "p1", "accepted", "body", REVIEW_3);
        let (corpus, report) = load_corpus(tmp.path(), LoadOptions::default()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(report.rejected_papers.len(), 1);
    }

    #[test]
    fn missing_body_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(
            tmp.path().join("manifest.json"),
            format!("[{}]", manifest_line("ghost", "accepted")),
        )
        .unwrap();
        let (corpus, report) = load_corpus(tmp.path(), LoadOptions::default()).unwrap();
        assert!(corpus.is_empty());
        assert_eq!(report.rejected_papers.len(), 1);
    }

    fn tiny_corpus(token_counts: &[(usize, Split, usize)]) -> Corpus {
        // (token_count, split, n_reviews)
        let mut submissions = Vec::new();
        let mut reviews = BTreeMap::new();
        for (i, &(tokens, split, n_reviews)) in token_counts.iter().enumerate() {
            let id = format!("p{i}");
            let body = vec!["w"; tokens].join(" ");
            submissions.push(Submission {
                id: id.clone(),
                split,
                body: if tokens == 0 { String::new() } else { body },
                token_count: tokens,
                metadata: BTreeMap::new(),
            });
            let rs: Vec<HumanReview> = (0..n_reviews)
                .map(|_| HumanReview {
                    paper_id: id.clone(),
                    scores: BTreeMap::from([("Overall".to_string(), 3.0)]),
                    strengths: vec![],
                    weaknesses: vec![],
                })
                .collect();
            reviews.insert(id, rs);
        }
        Corpus::new(submissions, reviews)
    }

    #[test]
    fn filter_keeps_papers_at_or_under_bound() {
        let corpus = tiny_corpus(&[
            (50_000, Split::Accepted, 1),
            (130_001, Split::Accepted, 1),
        ]);
        let filtered = filter_papers(&corpus, 130_000, false);
        assert_eq!(filtered.len(), 1);
        assert_eq!(filtered.submissions()[0].token_count, 50_000);
    }

    #[test]
    fn filter_with_large_bound_is_identity() {
        let corpus = tiny_corpus(&[(10, Split::Accepted, 1), (20, Split::Rejected, 1)]);
        let filtered = filter_papers(&corpus, 1_000_000, false);
        assert_eq!(filtered, corpus);
    }

    #[test]
    fn filter_all_oversized_gives_empty() {
        let corpus = tiny_corpus(&[(10, Split::Accepted, 1), (20, Split::Rejected, 1)]);
        let filtered = filter_papers(&corpus, 5, false);
        assert!(filtered.is_empty());
    }

    #[test]
    fn filter_drops_reviewless_when_asked() {
        let corpus = tiny_corpus(&[(10, Split::Accepted, 0), (20, Split::Rejected, 2)]);
        assert_eq!(filter_papers(&corpus, 100, false).len(), 2);
        let dropped = filter_papers(&corpus, 100, true);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped.submissions()[0].token_count, 20);
    }

    #[test]
    fn summary_constant_review_counts() {
        let corpus = tiny_corpus(&[(10, Split::Accepted, 2), (20, Split::Accepted, 2)]);
        let summary = summarize(&corpus).unwrap();
        assert_eq!(summary.accepted.reviews_per_paper_mean, 2.0);
        assert_eq!(summary.accepted.reviews_per_paper_std, 0.0);
    }

    #[test]
    fn summary_population_std() {
        // Counts [1,3]: mean 2, population std sqrt(((1-2)^2+(3-2)^2)/2) = 1.
        let corpus = tiny_corpus(&[(10, Split::Accepted, 1), (20, Split::Accepted, 3)]);
        let summary = summarize(&corpus).unwrap();
        assert_eq!(summary.accepted.reviews_per_paper_mean, 2.0);
        assert_eq!(summary.accepted.reviews_per_paper_std, 1.0);
    }

    #[test]
    fn summary_bin_width_is_range_over_30() {
        let corpus = tiny_corpus(&[
            (0, Split::Accepted, 1),
            (1500, Split::Rejected, 1),
            (3000, Split::Accepted, 1),
        ]);
        let summary = summarize(&corpus).unwrap();
        assert_eq!(summary.length_histogram.bin_width, 100.0);
        let total_acc: u32 = summary.length_histogram.accepted.iter().sum();
        let total_rej: u32 = summary.length_histogram.rejected.iter().sum();
        assert_eq!(total_acc as usize, summary.accepted.n_papers);
        assert_eq!(total_rej as usize, summary.rejected.n_papers);
    }

    #[test]
    fn summary_empty_corpus_errors() {
        assert!(matches!(
            summarize(&Corpus::default()),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn save_load_round_trip_is_fixed_point() {
        let tmp = tempfile::tempdir().unwrap();
        build_fixture(
            tmp.path(),
            &[
                ("p1", "accepted", "alpha beta gamma", REVIEW_3),
                ("p2", "rejected", "delta epsilon", "[]"),
            ],
        );
        let (corpus, _) = load_corpus(tmp.path(), LoadOptions::default()).unwrap();
        let out = tempfile::tempdir().unwrap();
        save_corpus(&corpus, out.path()).unwrap();
        let (reloaded, _) = load_corpus(out.path(), LoadOptions::default()).unwrap();
        assert_eq!(corpus, reloaded);
    }

    #[test]
    fn subword_counter_scales_up() {
        let counter = TokenCounter::SubwordApprox { multiplier: 1.3 };
        assert_eq!(counter.count("a b c d"), 6); // ceil(4 * 1.3) = 6
        assert_eq!(TokenCounter::Whitespace.count("a b c d"), 4);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_corpus() -> impl Strategy<Value = Corpus> {
            proptest::collection::vec((0usize..5000, any::<bool>(), 0usize..4), 1..20).prop_map(
                |entries| {
                    let entries: Vec<(usize, Split, usize)> = entries
                        .into_iter()
                        .map(|(t, acc, r)| {
                            (t, if acc { Split::Accepted } else { Split::Rejected }, r)
                        })
                        .collect();
                    tiny_corpus(&entries)
                },
            )
        }

        proptest! {
            #[test]
            fn filter_idempotent(corpus in arb_corpus(), bound in 0usize..6000) {
                let once = filter_papers(&corpus, bound, false);
                let twice = filter_papers(&once, bound, false);
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn filter_composes_as_min(corpus in arb_corpus(), a in 0usize..6000, b in 0usize..6000) {
                let chained = filter_papers(&filter_papers(&corpus, a, false), b, false);
                let direct = filter_papers(&corpus, a.min(b), false);
                prop_assert_eq!(chained, direct);
            }

            #[test]
            fn loaded_reviews_satisfy_grid(
                scores in proptest::collection::vec(0.5f64..6.0, 1..6),
            ) {
                // Fuzzed manifests: any review that survives loading must sit
                // on the half-point grid.
                let tmp = tempfile::tempdir().unwrap();
                let reviews: Vec<String> = scores
                    .iter()
                    .map(|s| format!(r#"{{"scores":{{"Overall":{s}}}}}"#))
                    .collect();
                build_fixture(
                    tmp.path(),
                    &[("p1", "accepted", "body", &format!("[{}]", reviews.join(",")))],
                );
                let (corpus, _) = load_corpus(tmp.path(), LoadOptions::default()).unwrap();
                for review in corpus.reviews_for("p1") {
                    for &v in review.scores.values() {
                        prop_assert!(on_half_point_grid(v));
                    }
                }
            }
        }
    }
}
