//! LLM-vs-human alignment metrics: MAE against the human mean, best-match
//! Pearson correlation, macro-combined split metrics, cross-run consistency,
//! and judge-based strengths/weaknesses recall.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Backend, CompletionRequest, GatewayError};
use crate::prompts::{render, PromptError, PromptRegistry};
use crate::review::extract_first_object;
use crate::stats::{self, StatsError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("judge verdict invalid: {0}")]
    InvalidVerdict(String),
}

/// Alignment aggregates for one scope (model × prompt × split).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub mae_mean: f64,
    pub mae_std: f64,
    pub best_match_r_mean: Option<f64>,
    pub best_match_r_std: Option<f64>,
    pub n_papers: usize,
    pub n_excluded: usize,
}

/// Share of papers whose repeated runs disagree, and whose spread exceeds
/// half a point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub pct_inconsistent: f64,
    pub pct_delta_gt_half: f64,
    pub n_papers: usize,
    pub n_excluded: usize,
}

/// Counts reported by the LLM judge for one (human review, LLM review) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub human_strength_points: u32,
    pub human_weakness_points: u32,
    pub captured_strengths: u32,
    pub captured_weaknesses: u32,
}

impl JudgeVerdict {
    /// Strengths recall; undefined when the human listed no strengths.
    pub fn s_recall(&self) -> Option<f64> {
        recall(self.captured_strengths, self.human_strength_points)
    }

    /// Weaknesses recall; undefined when the human listed no weaknesses.
    pub fn w_recall(&self) -> Option<f64> {
        recall(self.captured_weaknesses, self.human_weakness_points)
    }
}

fn recall(captured: u32, points: u32) -> Option<f64> {
    if points == 0 {
        None
    } else {
        Some(captured as f64 / points as f64)
    }
}

/// Mean absolute error of per-paper LLM Overall scores against the mean of
/// each paper's human Overall scores. Papers without a usable human score
/// are excluded and counted.
pub fn mae_vs_human_mean(
    llm_overall: &BTreeMap<String, f64>,
    humans: &BTreeMap<String, Vec<f64>>,
) -> Result<(f64, usize), MetricError> {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut excluded = 0usize;
    for (paper, &llm) in llm_overall {
        match humans.get(paper).filter(|scores| !scores.is_empty()) {
            Some(scores) => {
                total += (llm - stats::mean(scores)).abs();
                n += 1;
            }
            None => excluded += 1,
        }
    }
    if n == 0 {
        return Err(MetricError::Undefined(
            "mae: no papers with human reviews".to_string(),
        ));
    }
    Ok((total / n as f64, excluded))
}

/// For each paper, pair the LLM Overall with the human Overall minimizing
/// |llm − human|; ties break toward the lower human score. Returned pairs are
/// ordered by paper id.
pub fn best_match_pairs(
    llm_overall: &BTreeMap<String, f64>,
    humans: &BTreeMap<String, Vec<f64>>,
) -> Vec<(f64, f64)> {
    let mut pairs = Vec::new();
    for (paper, &llm) in llm_overall {
        let Some(scores) = humans.get(paper).filter(|s| !s.is_empty()) else {
            continue;
        };
        let best = best_match(llm, scores);
        pairs.push((llm, best));
    }
    pairs
}

fn best_match(llm: f64, humans: &[f64]) -> f64 {
    let mut best = humans[0];
    for &h in &humans[1..] {
        let d = (llm - h).abs();
        let best_d = (llm - best).abs();
        if d < best_d || (d == best_d && h < best) {
            best = h;
        }
    }
    best
}

/// Sample Pearson correlation over best-match pairs.
pub fn best_match_pearson(pairs: &[(f64, f64)]) -> Result<f64, MetricError> {
    let (llm, human): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    Ok(stats::pearson(&llm, &human)?)
}

/// Split-level metric bundle entering the macro combination.
#[derive(Debug, Clone, Copy)]
pub struct SplitMetric {
    pub mae: f64,
    pub r: f64,
    pub n: usize,
}

/// Macro-combine accepted and rejected metrics: plain average for MAE,
/// Fisher-z-space average for the correlation (unweighted). Correlations at
/// exactly ±1 are clamped to ±0.999999 and flagged.
pub fn macro_combine(
    accepted: SplitMetric,
    rejected: SplitMetric,
) -> Result<(f64, f64, bool), MetricError> {
    let mae = (accepted.mae + rejected.mae) / 2.0;
    let mut clamped = false;
    let mut prepare = |r: f64| -> Result<f64, MetricError> {
        if !(-1.0..=1.0).contains(&r) {
            return Err(MetricError::Undefined(format!("correlation {r} out of range")));
        }
        if r.abs() == 1.0 {
            clamped = true;
            Ok(r.signum() * 0.999999)
        } else {
            Ok(r)
        }
    };
    let za = stats::fisher_z(prepare(accepted.r)?)?;
    let zr = stats::fisher_z(prepare(rejected.r)?)?;
    let r = stats::inverse_fisher_z((za + zr) / 2.0);
    Ok((mae, r, clamped))
}

/// Human-human alignment: each review is treated as the prediction against
/// the leave-one-out mean of the remaining reviews (MAE) and its best match
/// among them (Pearson). Only papers with at least two reviews participate.
pub fn human_human_alignment(
    humans: &BTreeMap<String, Vec<f64>>,
) -> Result<(f64, f64, usize), MetricError> {
    let mut abs_errors = Vec::new();
    let mut pairs = Vec::new();
    let mut n_papers = 0usize;
    for scores in humans.values() {
        if scores.len() < 2 {
            continue;
        }
        n_papers += 1;
        for (i, &prediction) in scores.iter().enumerate() {
            let others: Vec<f64> = scores
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &s)| s)
                .collect();
            abs_errors.push((prediction - stats::mean(&others)).abs());
            pairs.push((prediction, best_match(prediction, &others)));
        }
    }
    if n_papers == 0 {
        return Err(MetricError::Undefined(
            "human-human: no papers with at least two reviews".to_string(),
        ));
    }
    let mae = stats::mean(&abs_errors);
    let r = best_match_pearson(&pairs)?;
    Ok((mae, r, n_papers))
}

/// Cross-run consistency of the Overall score. A paper is inconsistent when
/// its repeated runs are not all identical; the delta criterion is strict:
/// max − min > 0.5. Papers with fewer than two runs are excluded and counted.
pub fn consistency(runs: &BTreeMap<String, Vec<f64>>) -> Result<ConsistencyReport, MetricError> {
    let mut n = 0usize;
    let mut excluded = 0usize;
    let mut inconsistent = 0usize;
    let mut delta_gt_half = 0usize;
    for scores in runs.values() {
        if scores.len() < 2 {
            excluded += 1;
            continue;
        }
        n += 1;
        let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if scores.iter().any(|&s| s != scores[0]) {
            inconsistent += 1;
        }
        if max - min > 0.5 {
            delta_gt_half += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::Undefined(
            "consistency: no papers with repeated runs".to_string(),
        ));
    }
    Ok(ConsistencyReport {
        pct_inconsistent: 100.0 * inconsistent as f64 / n as f64,
        pct_delta_gt_half: 100.0 * delta_gt_half as f64 / n as f64,
        n_papers: n,
        n_excluded: excluded,
    })
}

fn format_review(strengths: &[String], weaknesses: &[String]) -> String {
    let mut out = String::from("Strengths:\n");
    for s in strengths {
        out.push_str("- ");
        out.push_str(s);
        out.push('\n');
    }
    out.push_str("\nWeaknesses:\n");
    for w in weaknesses {
        out.push_str("- ");
        out.push_str(w);
        out.push('\n');
    }
    out
}

fn parse_judge_counts(text: &str) -> Result<JudgeVerdict, MetricError> {
    let object = extract_first_object(text)
        .ok_or_else(|| MetricError::InvalidVerdict("no JSON object".to_string()))?;
    let category = |name: &str, field: &str| -> Result<u32, MetricError> {
        object
            .get(name)
            .and_then(|v| v.get(field))
            .and_then(|v| v.as_u64())
            .map(|v| v as u32)
            .ok_or_else(|| MetricError::InvalidVerdict(format!("missing {name}.{field}")))
    };
    let verdict = JudgeVerdict {
        human_strength_points: category("Strengths", "human_points")?,
        captured_strengths: category("Strengths", "captured")?,
        human_weakness_points: category("Weaknesses", "human_points")?,
        captured_weaknesses: category("Weaknesses", "captured")?,
    };
    if verdict.captured_strengths > verdict.human_strength_points
        || verdict.captured_weaknesses > verdict.human_weakness_points
    {
        return Err(MetricError::InvalidVerdict(
            "captured count exceeds human points".to_string(),
        ));
    }
    Ok(verdict)
}

/// Ask the judge backend which human-stated strengths and weaknesses the LLM
/// review captured. The human review must carry at least one point.
pub fn judge_recall(
    backend: &Backend,
    registry: &PromptRegistry,
    human: &crate::corpus::HumanReview,
    llm: &crate::review::GeneratedReview,
    parse_retry_budget: u32,
    tag: Option<String>,
) -> Result<JudgeVerdict, MetricError> {
    if human.strengths.is_empty() && human.weaknesses.is_empty() {
        return Err(MetricError::Undefined(
            "judge: human review has no strengths or weaknesses".to_string(),
        ));
    }
    let spec = registry.get_prompt("judge")?;
    let human_text = format_review(&human.strengths, &human.weaknesses);
    let llm_text = format_review(&llm.strengths, &llm.weaknesses);
    let bindings = BTreeMap::from([
        ("human_review", human_text.as_str()),
        ("llm_review", llm_text.as_str()),
    ]);
    let (system, user) = render(spec, &bindings)?;
    let tag = tag.unwrap_or_else(|| {
        format!(
            "judge/{}/{}/run{}",
            human.paper_id, llm.prompt_name, llm.run_index
        )
    });
    let request = CompletionRequest::new(system, user).with_tag(tag);
    let mut last_error = MetricError::InvalidVerdict("no attempts made".to_string());
    for _ in 0..=parse_retry_budget {
        let completion = backend.complete(&request)?;
        match parse_judge_counts(&completion.text) {
            Ok(verdict) => return Ok(verdict),
            Err(e) => last_error = e,
        }
    }
    Err(last_error)
}
