//! Registry of the five review prompts, three edit prompts, the judge prompt,
//! and the edit taxonomy; renders prompts with taxonomy, paper, and review
//! text substituted.
//!
//! Prompt texts ship as data files under `prompts/` and the taxonomy under
//! `taxonomy/`; both are embedded as bundled defaults and can be overridden
//! from a directory at startup. The bundled files are hash-pinned by the
//! acceptance suite.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown prompt '{0}'")]
    UnknownPrompt(String),
    #[error("unbound placeholder '${{{0}}}'")]
    UnboundPlaceholder(String),
    #[error("the baseline setting performs no edits and has no taxonomy")]
    BaselineHasNoTaxonomy,
    #[error("unknown ISI setting '{0}'")]
    UnknownSetting(String),
    #[error("failed to load prompt data: {0}")]
    Load(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Review,
    Edit,
    Judge,
}

/// Which output contract the model response must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaId {
    /// JSON object with Scores / Strengths / Weaknesses.
    ReviewJson,
    /// One bracketed action plus hunks in one of the three edit formats.
    EditProposal,
    /// JSON object with per-category point and capture counts.
    JudgeCounts,
}

#[derive(Debug, Clone)]
pub struct PromptSpec {
    pub name: String,
    pub kind: PromptKind,
    /// Verbatim prompt text; may contain `${taxonomy}`.
    pub template: String,
    pub schema_id: SchemaId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Base,
    AdversarialOnly,
}

/// One edit action from the taxonomy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditType {
    pub name: String,
    pub description: String,
    pub tier: Tier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsiSetting {
    Constrained,
    Default,
    Adversarial,
    /// Re-reviews the unedited submission; performs no edits.
    Baseline,
}

impl IsiSetting {
    pub fn parse(name: &str) -> Result<Self, PromptError> {
        match name {
            "constrained" => Ok(IsiSetting::Constrained),
            "default" => Ok(IsiSetting::Default),
            "adversarial" => Ok(IsiSetting::Adversarial),
            "baseline" => Ok(IsiSetting::Baseline),
            other => Err(PromptError::UnknownSetting(other.to_string())),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            IsiSetting::Constrained => "constrained",
            IsiSetting::Default => "default",
            IsiSetting::Adversarial => "adversarial",
            IsiSetting::Baseline => "baseline",
        }
    }

    /// Name of the edit prompt driving this setting.
    pub fn edit_prompt_name(&self) -> Option<&'static str> {
        match self {
            IsiSetting::Constrained => Some("edit_constrained"),
            IsiSetting::Default => Some("edit_default"),
            IsiSetting::Adversarial => Some("edit_adversarial"),
            IsiSetting::Baseline => None,
        }
    }
}

pub const REVIEW_PROMPT_NAMES: [&str; 5] =
    ["simple", "default", "ai_generated", "acl", "acl_senior"];

/// (registry name, bundled file name, verbatim text) for every shipped prompt.
pub const BUNDLED_PROMPTS: [(&str, &str, &str); 9] = [
    (
        "simple",
        "review_simple.txt",
        include_str!("../prompts/review_simple.txt"),
    ),
    (
        "default",
        "review_default.txt",
        include_str!("../prompts/review_default.txt"),
    ),
    (
        "ai_generated",
        "review_ai_generated.txt",
        include_str!("../prompts/review_ai_generated.txt"),
    ),
    (
        "acl",
        "review_acl.txt",
        include_str!("../prompts/review_acl.txt"),
    ),
    (
        "acl_senior",
        "review_acl_senior.txt",
        include_str!("../prompts/review_acl_senior.txt"),
    ),
    (
        "edit_constrained",
        "edit_constrained.txt",
        include_str!("../prompts/edit_constrained.txt"),
    ),
    (
        "edit_default",
        "edit_default.txt",
        include_str!("../prompts/edit_default.txt"),
    ),
    (
        "edit_adversarial",
        "edit_adversarial.txt",
        include_str!("../prompts/edit_adversarial.txt"),
    ),
    ("judge", "judge.txt", include_str!("../prompts/judge.txt")),
];

pub const BUNDLED_TAXONOMY: &str = include_str!("../taxonomy/taxonomy.json");

/// Trailing output contract for the judge, whose bundled text describes the
/// scoring but not a machine-readable format.
const JUDGE_OUTPUT_CONTRACT: &str = "\n\n  Return the counts strictly as a JSON object, nothing else:\n  {\"Strengths\": {\"human_points\": <int>, \"captured\": <int>}, \"Weaknesses\": {\"human_points\": <int>, \"captured\": <int>}}";

fn kind_of(name: &str) -> (PromptKind, SchemaId) {
    if name.starts_with("edit_") {
        (PromptKind::Edit, SchemaId::EditProposal)
    } else if name == "judge" {
        (PromptKind::Judge, SchemaId::JudgeCounts)
    } else {
        (PromptKind::Review, SchemaId::ReviewJson)
    }
}

/// Immutable prompt and taxonomy store; safe for concurrent reads.
#[derive(Debug, Clone)]
pub struct PromptRegistry {
    prompts: BTreeMap<String, PromptSpec>,
    taxonomy: Vec<EditType>,
}

impl PromptRegistry {
    /// Registry backed by the embedded data files.
    pub fn bundled() -> PromptRegistry {
        let mut prompts = BTreeMap::new();
        for (name, _, text) in BUNDLED_PROMPTS {
            let (kind, schema_id) = kind_of(name);
            prompts.insert(
                name.to_string(),
                PromptSpec {
                    name: name.to_string(),
                    kind,
                    template: text.to_string(),
                    schema_id,
                },
            );
        }
        let taxonomy =
            serde_json::from_str(BUNDLED_TAXONOMY).expect("bundled taxonomy parses");
        PromptRegistry { prompts, taxonomy }
    }

    /// Registry read from override directories; file names must match the
    /// bundled layout. Missing files fall back to bundled texts.
    pub fn from_dirs(
        prompts_dir: Option<&Path>,
        taxonomy_path: Option<&Path>,
    ) -> Result<PromptRegistry, PromptError> {
        let mut registry = PromptRegistry::bundled();
        if let Some(dir) = prompts_dir {
            for (name, file, _) in BUNDLED_PROMPTS {
                let path = dir.join(file);
                if path.is_file() {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| PromptError::Load(format!("{}: {e}", path.display())))?;
                    registry
                        .prompts
                        .get_mut(name)
                        .expect("bundled name present")
                        .template = text;
                }
            }
        }
        if let Some(path) = taxonomy_path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PromptError::Load(format!("{}: {e}", path.display())))?;
            registry.taxonomy = serde_json::from_str(&text)
                .map_err(|e| PromptError::Load(format!("{}: {e}", path.display())))?;
        }
        Ok(registry)
    }

    pub fn get_prompt(&self, name: &str) -> Result<&PromptSpec, PromptError> {
        self.prompts
            .get(name)
            .ok_or_else(|| PromptError::UnknownPrompt(name.to_string()))
    }

    pub fn taxonomy(&self) -> &[EditType] {
        &self.taxonomy
    }

    /// Edit types allowed in `setting`: the 8 base types for constrained and
    /// default, all 18 for adversarial.
    pub fn taxonomy_for(&self, setting: IsiSetting) -> Result<Vec<&EditType>, PromptError> {
        match setting {
            IsiSetting::Baseline => Err(PromptError::BaselineHasNoTaxonomy),
            IsiSetting::Constrained | IsiSetting::Default => Ok(self
                .taxonomy
                .iter()
                .filter(|t| t.tier == Tier::Base)
                .collect()),
            IsiSetting::Adversarial => Ok(self.taxonomy.iter().collect()),
        }
    }
}

/// Render a taxonomy slice as the ALLOWED ACTIONS bullet list the edit
/// prompts refer to.
pub fn render_taxonomy(types: &[&EditType]) -> String {
    let mut out = String::from("ALLOWED ACTIONS:");
    for t in types {
        out.push_str("\n- ");
        out.push_str(&t.name);
        out.push_str(": ");
        out.push_str(&t.description);
    }
    out
}

/// Substitute every `${name}` placeholder in `template` from `bindings`;
/// any placeholder without a binding is an error naming it.
fn substitute(template: &str, bindings: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find('}') {
            Some(end) => {
                let name = &after[..end];
                match bindings.get(name) {
                    Some(value) => out.push_str(value),
                    None => return Err(PromptError::UnboundPlaceholder(name.to_string())),
                }
                rest = &after[end + 1..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Deterministically render `spec` into (system_text, user_text).
///
/// Instructions go to the system message; paper and review content go to the
/// user message. Review prompts require a `paper` binding, edit prompts
/// `review` + `paper` (plus `taxonomy` for the template), the judge prompt
/// `human_review` + `llm_review`.
pub fn render(
    spec: &PromptSpec,
    bindings: &BTreeMap<&str, &str>,
) -> Result<(String, String), PromptError> {
    let mut system = substitute(&spec.template, bindings)?;
    let user_template = match spec.kind {
        PromptKind::Review => "${paper}",
        PromptKind::Edit => "# Review\n\n${review}\n\n# Paper\n\n${paper}",
        PromptKind::Judge => {
            system.push_str(JUDGE_OUTPUT_CONTRACT);
            "# Human Review (Gold Standard)\n\n${human_review}\n\n# LLM-generated Review\n\n${llm_review}"
        }
    };
    let user = substitute(user_template, bindings)?;
    Ok((system, user))
}
