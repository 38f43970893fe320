//! Report rows, deterministic number formatting, and CSV/JSON/plot-data
//! emission.
//!
//! Output is byte-stable given identical artifacts: orderings are explicit,
//! MAE and percentages carry 2 decimals, correlations, p-values, and effect
//! sizes carry 3, and every value stored in the JSON bundle is rounded to its
//! display precision first.

use serde::Serialize;

pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

pub fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

pub fn fmt2(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

pub fn fmt3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

fn csv_line(fields: &[String]) -> String {
    fields
        .iter()
        .map(|f| csv_field(f))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AlignmentRow {
    pub model: String,
    pub prompt: String,
    pub split: String,
    pub mae_mean: Option<f64>,
    pub mae_std: Option<f64>,
    pub r_mean: Option<f64>,
    pub r_std: Option<f64>,
    pub n_papers: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub model: String,
    pub prompt: String,
    pub split: String,
    pub pct_inconsistent: f64,
    pub pct_delta_gt_half: f64,
    pub n_papers: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeRow {
    pub model: String,
    pub prompt: String,
    pub split: String,
    pub s_recall: Option<f64>,
    pub w_recall: Option<f64>,
    pub n_verdicts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsiRow {
    pub setting: String,
    pub split: String,
    pub n: usize,
    pub worse_pct: f64,
    pub equal_pct: f64,
    pub better_pct: f64,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditTypeRow {
    pub setting: String,
    pub action: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    pub bin_center: f64,
    pub accepted: u32,
    pub rejected: u32,
}

/// Everything the report emitters need, already rounded for display.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EvaluationBundle {
    pub config_hash: String,
    pub alignment: Vec<AlignmentRow>,
    pub consistency: Vec<ConsistencyRow>,
    pub judge: Vec<JudgeRow>,
    pub isi: Vec<IsiRow>,
    pub edit_types: Vec<EditTypeRow>,
    pub histogram: Vec<HistogramRow>,
    pub notes: Vec<String>,
}

pub fn alignment_csv(rows: &[AlignmentRow]) -> String {
    let mut out = String::from(
        "model,prompt,split,mae_mean,mae_std,best_match_r_mean,best_match_r_std,n_papers,n_excluded\n",
    );
    for r in rows {
        out.push_str(&csv_line(&[
            r.model.clone(),
            r.prompt.clone(),
            r.split.clone(),
            fmt2(r.mae_mean),
            fmt2(r.mae_std),
            fmt3(r.r_mean),
            fmt3(r.r_std),
            r.n_papers.to_string(),
            r.n_excluded.to_string(),
        ]));
        out.push('\n');
    }
    out
}

pub fn consistency_csv(rows: &[ConsistencyRow]) -> String {
    let mut out =
        String::from("model,prompt,split,pct_inconsistent,pct_delta_gt_half,n_papers,n_excluded\n");
    for r in rows {
        out.push_str(&csv_line(&[
            r.model.clone(),
            r.prompt.clone(),
            r.split.clone(),
            fmt2(Some(r.pct_inconsistent)),
            fmt2(Some(r.pct_delta_gt_half)),
            r.n_papers.to_string(),
            r.n_excluded.to_string(),
        ]));
        out.push('\n');
    }
    out
}

pub fn judge_csv(rows: &[JudgeRow]) -> String {
    let mut out = String::from("model,prompt,split,s_recall,w_recall,n_verdicts\n");
    for r in rows {
        out.push_str(&csv_line(&[
            r.model.clone(),
            r.prompt.clone(),
            r.split.clone(),
            fmt3(r.s_recall),
            fmt3(r.w_recall),
            r.n_verdicts.to_string(),
        ]));
        out.push('\n');
    }
    out
}

pub fn isi_csv(rows: &[IsiRow]) -> String {
    let mut out =
        String::from("setting,split,n,worse_pct,equal_pct,better_pct,t,p,d\n");
    for r in rows {
        out.push_str(&csv_line(&[
            r.setting.clone(),
            r.split.clone(),
            r.n.to_string(),
            fmt2(Some(r.worse_pct)),
            fmt2(Some(r.equal_pct)),
            fmt2(Some(r.better_pct)),
            fmt3(r.t),
            fmt3(r.p),
            fmt3(r.d),
        ]));
        out.push('\n');
    }
    out
}

pub fn edit_types_csv(rows: &[EditTypeRow]) -> String {
    let mut out = String::from("setting,action,count\n");
    for r in rows {
        out.push_str(&csv_line(&[
            r.setting.clone(),
            r.action.clone(),
            r.count.to_string(),
        ]));
        out.push('\n');
    }
    out
}

pub fn histogram_csv(rows: &[HistogramRow]) -> String {
    let mut out = String::from("bin_center,accepted,rejected\n");
    for r in rows {
        out.push_str(&csv_line(&[
            format!("{:.1}", r.bin_center),
            r.accepted.to_string(),
            r.rejected.to_string(),
        ]));
        out.push('\n');
    }
    out
}

/// Per model × prompt × split best-match correlation bars.
pub fn best_match_bars_csv(rows: &[AlignmentRow]) -> String {
    let mut out = String::from("model,prompt,split,r_mean,r_std\n");
    for r in rows {
        // Bars cover the concrete prompts only, not aggregate rows.
        if r.prompt.is_empty() || r.prompt == "All" || r.prompt.starts_with("Best") {
            continue;
        }
        out.push_str(&csv_line(&[
            r.model.clone(),
            r.prompt.clone(),
            r.split.clone(),
            fmt3(r.r_mean),
            fmt3(r.r_std),
        ]));
        out.push('\n');
    }
    out
}

pub fn bundle_json(bundle: &EvaluationBundle) -> String {
    let mut json = serde_json::to_string_pretty(bundle).expect("bundle serializes");
    json.push('\n');
    json
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_widths() {
        assert_eq!(fmt2(Some(0.6400000001)), "0.64");
        assert_eq!(fmt3(Some(0.2755)), "0.276");
        assert_eq!(fmt2(None), "");
    }

    #[test]
    fn csv_quotes_embedded_commas() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }

    #[test]
    fn rounding_is_display_stable() {
        let v = round3(0.27549999);
        assert_eq!(format!("{v:.3}"), "0.275");
        assert_eq!(round2(66.66666), 66.67);
    }

    #[test]
    fn alignment_csv_shape() {
        let rows = vec![AlignmentRow {
            model: "m".into(),
            prompt: "simple".into(),
            split: "combined".into(),
            mae_mean: Some(0.64),
            mae_std: Some(0.0),
            r_mean: Some(0.205),
            r_std: Some(0.02),
            n_papers: 10,
            n_excluded: 1,
        }];
        let csv = alignment_csv(&rows);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("model,prompt,split"));
        assert_eq!(lines.next().unwrap(), "m,simple,combined,0.64,0.00,0.205,0.020,10,1");
    }

    #[test]
    fn bars_skip_aggregate_rows() {
        let mk = |prompt: &str| AlignmentRow {
            model: "m".into(),
            prompt: prompt.into(),
            split: "combined".into(),
            r_mean: Some(0.1),
            r_std: Some(0.0),
            ..Default::default()
        };
        let rows = vec![mk("simple"), mk("All"), mk("Best(simple)"), mk("")];
        let csv = best_match_bars_csv(&rows);
        assert_eq!(csv.lines().count(), 2); // header + simple
    }
}
