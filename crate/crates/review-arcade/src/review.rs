//! Structured review generation: render a review prompt for a submission,
//! call a backend, and parse/repair the model output into a validated review.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Submission;
use crate::gateway::{Backend, CompletionRequest, GatewayError, RequestParams};
use crate::prompts::{render, PromptError, PromptRegistry};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no JSON object found in model output")]
    NoJsonObject,
    #[error("model output object lacks a Scores field")]
    MissingScores,
    #[error("review unparseable after {attempts} attempts")]
    Unparseable { attempts: u32, last_raw: String },
    #[error("submission body is empty")]
    EmptyBody,
}

/// A score entry: numeric, or a label such as Accept/Reject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreValue {
    Number(f64),
    Label(String),
}

impl ScoreValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            ScoreValue::Number(v) => Some(*v),
            ScoreValue::Label(_) => None,
        }
    }
}

/// A parsed, validated LLM review of one submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedReview {
    pub paper_id: String,
    pub prompt_name: String,
    pub model_name: String,
    pub run_index: u32,
    pub scores: BTreeMap<String, ScoreValue>,
    pub strengths: Vec<String>,
    pub weaknesses: Vec<String>,
    pub raw_text: String,
}

impl GeneratedReview {
    /// The Overall score, when present and numeric. Reviews without it are
    /// excluded from metrics.
    pub fn overall(&self) -> Option<f64> {
        self.scores.get("Overall").and_then(ScoreValue::as_number)
    }
}

/// Parameters for repeated review generation.
#[derive(Debug, Clone, Copy)]
pub struct ReviewRequestParams {
    pub n_runs: u32,
    pub temperature: Option<f64>,
    /// Full-call regenerations allowed when output cannot be parsed.
    pub parse_retry_budget: u32,
    /// Snap numeric scores to the half-point grid after clamping.
    pub snap: bool,
}

impl Default for ReviewRequestParams {
    fn default() -> Self {
        ReviewRequestParams {
            n_runs: 3,
            temperature: None,
            parse_retry_budget: 2,
            snap: false,
        }
    }
}

/// Fields extracted from raw model text, before identity fields are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReview {
    pub scores: BTreeMap<String, ScoreValue>,
    pub strengths: Vec<String>,
    pub weaknesses: Vec<String>,
}

fn canonical_key(key: &str) -> String {
    for known in ["Overall", "Soundness", "Acceptance", "Confidence"] {
        if key.eq_ignore_ascii_case(known) {
            return known.to_string();
        }
    }
    key.to_string()
}

fn coerce_score(value: &serde_json::Value) -> Option<ScoreValue> {
    match value {
        serde_json::Value::Null => None,
        serde_json::Value::Number(n) => n.as_f64().map(ScoreValue::Number),
        serde_json::Value::String(s) => {
            let trimmed = s.trim();
            match trimmed.parse::<f64>() {
                Ok(v) => Some(ScoreValue::Number(v)),
                Err(_) => Some(ScoreValue::Label(trimmed.to_string())),
            }
        }
        _ => None,
    }
}

fn coerce_string_list(value: Option<&serde_json::Value>) -> Vec<String> {
    match value {
        Some(serde_json::Value::Array(items)) => items
            .iter()
            .map(|item| match item {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect(),
        Some(serde_json::Value::String(s)) => vec![s.clone()],
        _ => Vec::new(),
    }
}

/// Extract the first well-formed JSON object embedded in `text`.
///
/// Tolerates markdown fences and surrounding prose: every `{` is tried as a
/// candidate start until one parses.
pub fn extract_first_object(text: &str) -> Option<serde_json::Value> {
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'{' {
            continue;
        }
        let mut stream =
            serde_json::Deserializer::from_str(&text[i..]).into_iter::<serde_json::Value>();
        if let Some(Ok(value)) = stream.next() {
            if value.is_object() {
                return Some(value);
            }
        }
    }
    None
}

fn get_field<'v>(object: &'v serde_json::Value, name: &str) -> Option<&'v serde_json::Value> {
    object.as_object().and_then(|map| {
        map.iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v)
    })
}

/// Parse raw model text into review fields.
///
/// Score values may be numbers, numeric strings, or null (null means the
/// score is absent); Acceptance may also be an Accept/Reject label.
pub fn parse_review_text(text: &str) -> Result<ParsedReview, ReviewError> {
    let object = extract_first_object(text).ok_or(ReviewError::NoJsonObject)?;
    let scores_value = get_field(&object, "Scores").ok_or(ReviewError::MissingScores)?;
    let mut scores = BTreeMap::new();
    if let Some(map) = scores_value.as_object() {
        for (key, value) in map {
            if let Some(score) = coerce_score(value) {
                scores.insert(canonical_key(key), score);
            }
        }
    }
    Ok(ParsedReview {
        scores,
        strengths: coerce_string_list(get_field(&object, "Strengths")),
        weaknesses: coerce_string_list(get_field(&object, "Weaknesses")),
    })
}

/// A score adjusted or flagged during validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationNote {
    pub key: String,
    pub raw: f64,
    pub adjusted: f64,
}

/// Clamp numeric scores to [1, 5]; with `snap`, round to the nearest 0.5
/// (ties round up). Returns notes for every off-range raw value. Total and
/// idempotent.
pub fn validate_scores(
    scores: &mut BTreeMap<String, ScoreValue>,
    snap: bool,
) -> Vec<ValidationNote> {
    let mut notes = Vec::new();
    for (key, value) in scores.iter_mut() {
        if let ScoreValue::Number(v) = value {
            let raw = *v;
            let mut adjusted = raw.clamp(1.0, 5.0);
            if snap {
                // f64::round rounds half away from zero: ties round up here
                // since scores are positive.
                adjusted = (adjusted * 2.0).round() / 2.0;
            }
            if raw != adjusted {
                if !(1.0..=5.0).contains(&raw) {
                    notes.push(ValidationNote {
                        key: key.clone(),
                        raw,
                        adjusted,
                    });
                }
                *v = adjusted;
            }
        }
    }
    notes
}

fn review_tag(paper_id: &str, prompt_name: &str, run_index: u32) -> String {
    format!("review/{paper_id}/{prompt_name}/run{run_index}")
}

/// Generate one structured review of `submission` (Eq. 1's r = f(M, ρ, s)).
///
/// Renders the prompt, calls the backend, and parses the output; unparseable
/// output triggers full-call retries within the parse budget. The raw model
/// text is kept verbatim on the returned review.
pub fn generate_review(
    backend: &Backend,
    registry: &PromptRegistry,
    prompt_name: &str,
    submission: &Submission,
    run_index: u32,
    params: &ReviewRequestParams,
) -> Result<GeneratedReview, ReviewError> {
    generate_review_for_body(
        backend,
        registry,
        prompt_name,
        &submission.id,
        &submission.body,
        run_index,
        params,
        review_tag(&submission.id, prompt_name, run_index),
    )
}

/// Review an explicit body text under a caller-chosen request tag. The ISI
/// loop reviews evolving bodies of the same paper through this entry point.
#[allow(clippy::too_many_arguments)]
pub fn generate_review_for_body(
    backend: &Backend,
    registry: &PromptRegistry,
    prompt_name: &str,
    paper_id: &str,
    body: &str,
    run_index: u32,
    params: &ReviewRequestParams,
    tag: String,
) -> Result<GeneratedReview, ReviewError> {
    if body.is_empty() {
        return Err(ReviewError::EmptyBody);
    }
    let spec = registry.get_prompt(prompt_name)?;
    let bindings = BTreeMap::from([("paper", body)]);
    let (system, user) = render(spec, &bindings)?;
    let mut request = CompletionRequest::new(system, user).with_tag(tag);
    request.params = RequestParams {
        temperature: params.temperature,
        ..Default::default()
    };

    let attempts_allowed = params.parse_retry_budget + 1;
    let mut last_raw = String::new();
    for _ in 0..attempts_allowed {
        let completion = backend.complete(&request)?;
        match parse_review_text(&completion.text) {
            Ok(parsed) => {
                let mut scores = parsed.scores;
                validate_scores(&mut scores, params.snap);
                return Ok(GeneratedReview {
                    paper_id: paper_id.to_string(),
                    prompt_name: prompt_name.to_string(),
                    model_name: backend.model_name().to_string(),
                    run_index,
                    scores,
                    strengths: parsed.strengths,
                    weaknesses: parsed.weaknesses,
                    raw_text: completion.text,
                });
            }
            Err(_) => last_raw = completion.text,
        }
    }
    Err(ReviewError::Unparseable {
        attempts: attempts_allowed,
        last_raw,
    })
}

/// One persisted review cell: a valid review or a recorded failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReview {
    pub paper_id: String,
    pub prompt: String,
    pub model: String,
    pub run_index: u32,
    pub valid: bool,
    #[serde(default)]
    pub scores: BTreeMap<String, ScoreValue>,
    #[serde(default)]
    pub strengths: Vec<String>,
    #[serde(default)]
    pub weaknesses: Vec<String>,
    #[serde(default)]
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl StoredReview {
    pub fn from_review(review: GeneratedReview) -> StoredReview {
        StoredReview {
            paper_id: review.paper_id,
            prompt: review.prompt_name,
            model: review.model_name,
            run_index: review.run_index,
            valid: true,
            scores: review.scores,
            strengths: review.strengths,
            weaknesses: review.weaknesses,
            raw_text: review.raw_text,
            failure: None,
        }
    }

    pub fn from_failure(
        paper_id: &str,
        prompt: &str,
        model: &str,
        run_index: u32,
        error: &ReviewError,
    ) -> StoredReview {
        let raw_text = match error {
            ReviewError::Unparseable { last_raw, .. } => last_raw.clone(),
            _ => String::new(),
        };
        StoredReview {
            paper_id: paper_id.to_string(),
            prompt: prompt.to_string(),
            model: model.to_string(),
            run_index,
            valid: false,
            scores: BTreeMap::new(),
            strengths: Vec::new(),
            weaknesses: Vec::new(),
            raw_text,
            failure: Some(error.to_string()),
        }
    }

    pub fn to_review(&self) -> Option<GeneratedReview> {
        if !self.valid {
            return None;
        }
        Some(GeneratedReview {
            paper_id: self.paper_id.clone(),
            prompt_name: self.prompt.clone(),
            model_name: self.model.clone(),
            run_index: self.run_index,
            scores: self.scores.clone(),
            strengths: self.strengths.clone(),
            weaknesses: self.weaknesses.clone(),
            raw_text: self.raw_text.clone(),
        })
    }
}
