//! The iterative review→edit→apply loop (ISI) in constrained, default,
//! adversarial, and baseline settings, plus outcome classification over
//! finished trajectories.

mod edit;

pub use edit::{apply_edit, parse_edit, EditError, EditFormat, EditProposal, Hunk};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Split, Submission};
use crate::gateway::{Backend, CompletionRequest, GatewayError};
use crate::prompts::{render, render_taxonomy, IsiSetting, PromptError, PromptRegistry};
use crate::review::{generate_review_for_body, GeneratedReview, ReviewError, ReviewRequestParams};

#[derive(Debug, Error)]
pub enum IsiError {
    #[error("initial review failed for '{paper_id}': {reason}")]
    InitialReviewFailed { paper_id: String, reason: String },
    #[error("initial review for '{paper_id}' has no Overall score")]
    InitialOverallMissing { paper_id: String },
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no completed trajectories to classify")]
    NoTrajectories,
}

/// Per-paper Worse/Equal/Better after the loop, from sign(final − initial).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Worse,
    Equal,
    Better,
}

impl Outcome {
    fn from_scores(initial: f64, final_: f64) -> Outcome {
        if final_ > initial {
            Outcome::Better
        } else if final_ < initial {
            Outcome::Worse
        } else {
            Outcome::Equal
        }
    }
}

/// One loop iteration: the review of sⁱ and the edit that produced sⁱ⁺¹.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u32,
    /// Review of the iteration's input body; absent when generation failed
    /// and the previous score was carried forward.
    pub review: Option<GeneratedReview>,
    pub edit: Option<EditProposal>,
    pub applied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

/// A full ISI run for one paper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub paper_id: String,
    pub split: Split,
    pub setting: IsiSetting,
    pub iterations: Vec<IterationRecord>,
    pub final_review: Option<GeneratedReview>,
    pub initial_overall: f64,
    pub final_overall: f64,
    pub outcome: Outcome,
    /// Every intermediate body s_0 … s_N; not part of the summary record.
    #[serde(skip)]
    pub bodies: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct IsiOptions {
    pub n_iterations: u32,
    /// Review prompt name used inside the loop.
    pub review_prompt: String,
    pub review_params: ReviewRequestParams,
    /// Generate a fresh review of s_N as the endpoint; when false, the last
    /// in-loop review is the endpoint.
    pub fresh_final_review: bool,
    /// Reviews averaged into each endpoint score. 1 compares the single t_0
    /// and t_N reviews; k > 1 uses k-run-mean endpoints.
    pub endpoint_runs: u32,
}

impl Default for IsiOptions {
    fn default() -> Self {
        IsiOptions {
            n_iterations: 10,
            review_prompt: "default".to_string(),
            review_params: ReviewRequestParams {
                n_runs: 1,
                ..Default::default()
            },
            fresh_final_review: true,
            endpoint_runs: 1,
        }
    }
}

fn isi_tag(setting: IsiSetting, paper_id: &str, stage: &str) -> String {
    format!("isi/{}/{}/{}", setting.label(), paper_id, stage)
}

fn propose_edit(
    edit_backend: &Backend,
    registry: &PromptRegistry,
    setting: IsiSetting,
    review: &GeneratedReview,
    body: &str,
    tag: String,
) -> Result<EditProposal, String> {
    let prompt_name = setting
        .edit_prompt_name()
        .expect("non-baseline settings have an edit prompt");
    let spec = registry.get_prompt(prompt_name).map_err(|e| e.to_string())?;
    let allowed = registry.taxonomy_for(setting).map_err(|e| e.to_string())?;
    let taxonomy_text = render_taxonomy(&allowed);
    let bindings = BTreeMap::from([
        ("taxonomy", taxonomy_text.as_str()),
        ("review", review.raw_text.as_str()),
        ("paper", body),
    ]);
    let (system, user) = render(spec, &bindings).map_err(|e| e.to_string())?;
    let request = CompletionRequest::new(system, user).with_tag(tag);
    let completion = edit_backend.complete(&request).map_err(|e| e.to_string())?;
    parse_edit(&completion.text, &allowed).map_err(|e| e.to_string())
}

/// Run the ISI loop on one submission.
///
/// For i in 0..n: review sⁱ; outside the baseline setting, render the
/// setting's edit prompt with that review, parse the proposal, and apply one
/// edit to obtain sⁱ⁺¹. Failed edits carry sⁱ forward unchanged. A final
/// review of s_N provides the endpoint score. The reviewer and editor
/// backends are independently configurable.
pub fn run_isi(
    review_backend: &Backend,
    edit_backend: &Backend,
    registry: &PromptRegistry,
    submission: &Submission,
    setting: IsiSetting,
    opts: &IsiOptions,
) -> Result<Trajectory, IsiError> {
    let mut bodies = vec![submission.body.clone()];
    let mut iterations = Vec::new();
    let mut initial_overall: Option<f64> = None;
    let mut last_valid_review: Option<GeneratedReview> = None;

    for i in 0..opts.n_iterations {
        let body = bodies.last().expect("at least s_0").clone();
        let review_result = generate_review_for_body(
            review_backend,
            registry,
            &opts.review_prompt,
            &submission.id,
            &body,
            i,
            &opts.review_params,
            isi_tag(setting, &submission.id, &format!("iter{i}/review")),
        );

        let review = match review_result {
            Ok(r) => r,
            Err(e) => {
                if i == 0 {
                    return Err(IsiError::InitialReviewFailed {
                        paper_id: submission.id.clone(),
                        reason: e.to_string(),
                    });
                }
                // Mid-loop invalid review: the retry budget is already spent
                // inside generate_review, so carry the body forward.
                iterations.push(IterationRecord {
                    index: i,
                    review: None,
                    edit: None,
                    applied: false,
                    failure_reason: Some(format!("review failed: {e}")),
                });
                bodies.push(body);
                continue;
            }
        };
        if i == 0 {
            let first = review.overall().ok_or_else(|| {
                IsiError::InitialOverallMissing {
                    paper_id: submission.id.clone(),
                }
            })?;
            let mut endpoint_scores = vec![first];
            for rep in 1..opts.endpoint_runs {
                if let Ok(extra) = generate_review_for_body(
                    review_backend,
                    registry,
                    &opts.review_prompt,
                    &submission.id,
                    &body,
                    rep,
                    &opts.review_params,
                    isi_tag(setting, &submission.id, &format!("iter0/review/rep{rep}")),
                ) {
                    if let Some(score) = extra.overall() {
                        endpoint_scores.push(score);
                    }
                }
            }
            initial_overall =
                Some(endpoint_scores.iter().sum::<f64>() / endpoint_scores.len() as f64);
        }
        last_valid_review = Some(review.clone());

        if setting == IsiSetting::Baseline {
            iterations.push(IterationRecord {
                index: i,
                review: Some(review),
                edit: None,
                applied: false,
                failure_reason: None,
            });
            bodies.push(body);
            continue;
        }

        match propose_edit(
            edit_backend,
            registry,
            setting,
            &review,
            &body,
            isi_tag(setting, &submission.id, &format!("iter{i}/edit")),
        ) {
            Ok(edit) => match apply_edit(&body, &edit) {
                Ok(next_body) => {
                    iterations.push(IterationRecord {
                        index: i,
                        review: Some(review),
                        edit: Some(edit),
                        applied: true,
                        failure_reason: None,
                    });
                    bodies.push(next_body);
                }
                Err(e) => {
                    iterations.push(IterationRecord {
                        index: i,
                        review: Some(review),
                        edit: Some(edit),
                        applied: false,
                        failure_reason: Some(e.to_string()),
                    });
                    bodies.push(body);
                }
            },
            Err(reason) => {
                iterations.push(IterationRecord {
                    index: i,
                    review: Some(review),
                    edit: None,
                    applied: false,
                    failure_reason: Some(reason),
                });
                bodies.push(body);
            }
        }
    }

    let initial_overall = initial_overall.expect("set at iteration 0");
    let final_review = if opts.fresh_final_review {
        match generate_review_for_body(
            review_backend,
            registry,
            &opts.review_prompt,
            &submission.id,
            bodies.last().expect("s_N"),
            opts.n_iterations,
            &opts.review_params,
            isi_tag(setting, &submission.id, "final/review"),
        ) {
            Ok(r) => Some(r),
            // Fall back to the last in-loop review rather than losing the
            // whole trajectory.
            Err(_) => last_valid_review.clone(),
        }
    } else {
        last_valid_review.clone()
    };
    let mut final_scores: Vec<f64> = final_review
        .as_ref()
        .and_then(GeneratedReview::overall)
        .into_iter()
        .collect();
    if opts.fresh_final_review {
        for rep in 1..opts.endpoint_runs {
            if let Ok(extra) = generate_review_for_body(
                review_backend,
                registry,
                &opts.review_prompt,
                &submission.id,
                bodies.last().expect("s_N"),
                opts.n_iterations + rep,
                &opts.review_params,
                isi_tag(setting, &submission.id, &format!("final/review/rep{rep}")),
            ) {
                if let Some(score) = extra.overall() {
                    final_scores.push(score);
                }
            }
        }
    }
    let final_overall = if final_scores.is_empty() {
        initial_overall
    } else {
        final_scores.iter().sum::<f64>() / final_scores.len() as f64
    };

    Ok(Trajectory {
        paper_id: submission.id.clone(),
        split: submission.split,
        setting,
        iterations,
        final_review,
        initial_overall,
        final_overall,
        outcome: Outcome::from_scores(initial_overall, final_overall),
        bodies,
    })
}

/// Outcome percentages plus the paired endpoint score vectors feeding the
/// statistics module. Vectors are ordered by paper id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeBreakdown {
    pub n: usize,
    pub worse_pct: f64,
    pub equal_pct: f64,
    pub better_pct: f64,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

/// Classify completed trajectories into Worse/Equal/Better percentages.
pub fn classify_outcomes(trajectories: &[&Trajectory]) -> Result<OutcomeBreakdown, IsiError> {
    if trajectories.is_empty() {
        return Err(IsiError::NoTrajectories);
    }
    let mut ordered: Vec<&&Trajectory> = trajectories.iter().collect();
    ordered.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
    let n = ordered.len();
    let mut counts = [0usize; 3];
    let mut before = Vec::with_capacity(n);
    let mut after = Vec::with_capacity(n);
    for t in ordered {
        let slot = match t.outcome {
            Outcome::Worse => 0,
            Outcome::Equal => 1,
            Outcome::Better => 2,
        };
        counts[slot] += 1;
        before.push(t.initial_overall);
        after.push(t.final_overall);
    }
    let pct = |c: usize| 100.0 * c as f64 / n as f64;
    Ok(OutcomeBreakdown {
        n,
        worse_pct: pct(counts[0]),
        equal_pct: pct(counts[1]),
        better_pct: pct(counts[2]),
        before,
        after,
    })
}

/// Count applied edits per action name (edit-type frequency report).
pub fn edit_type_frequency(trajectories: &[&Trajectory]) -> BTreeMap<String, usize> {
    let mut freq = BTreeMap::new();
    for t in trajectories {
        for it in &t.iterations {
            if it.applied {
                if let Some(edit) = &it.edit {
                    *freq.entry(edit.selected_action.clone()).or_insert(0) += 1;
                }
            }
        }
    }
    freq
}
