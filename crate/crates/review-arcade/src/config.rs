//! Experiment configuration (TOML), the content-addressed config hash, and
//! the per-run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::BackendConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub root: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Drop papers without human reviews at load time. Off by default so the
    /// ISI stage can still run on reviewless papers; alignment metrics
    /// exclude them regardless.
    #[serde(default)]
    pub drop_reviewless: bool,
    /// "whitespace" or "subword_approx".
    #[serde(default = "default_counter")]
    pub token_counter: String,
    #[serde(default = "default_multiplier")]
    pub subword_multiplier: f64,
    #[serde(default)]
    pub strict: bool,
}

fn default_max_tokens() -> usize {
    130_000
}
fn default_true() -> bool {
    true
}
fn default_counter() -> String {
    "whitespace".to_string()
}
fn default_multiplier() -> f64 {
    1.3
}

impl CorpusConfig {
    pub fn counter(&self) -> Result<crate::corpus::TokenCounter, ConfigError> {
        match self.token_counter.as_str() {
            "whitespace" => Ok(crate::corpus::TokenCounter::Whitespace),
            "subword_approx" => Ok(crate::corpus::TokenCounter::SubwordApprox {
                multiplier: self.subword_multiplier,
            }),
            other => Err(ConfigError::Invalid(format!(
                "unknown token_counter '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReviewStageConfig {
    /// Backend names to generate reviews with.
    pub backends: Vec<String>,
    pub prompts: Vec<String>,
    #[serde(default = "default_runs")]
    pub n_runs: u32,
    #[serde(default)]
    pub snap_scores: bool,
    #[serde(default = "default_parse_budget")]
    pub parse_retry_budget: u32,
    #[serde(default)]
    pub temperature: Option<f64>,
}

fn default_runs() -> u32 {
    3
}
fn default_parse_budget() -> u32 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsiStageConfig {
    pub settings: Vec<String>,
    #[serde(default = "default_iterations")]
    pub n_iterations: u32,
    #[serde(default = "default_isi_prompt")]
    pub review_prompt: String,
    /// Reviewer backend; defaults to the first review-stage backend.
    #[serde(default)]
    pub review_backend: Option<String>,
    /// Editor backend (Eq. 2's M′); defaults to the reviewer backend.
    #[serde(default)]
    pub edit_backend: Option<String>,
    #[serde(default = "default_true")]
    pub fresh_final_review: bool,
    /// Reviews averaged into each endpoint score; 1 keeps the single
    /// t_0/t_N comparison.
    #[serde(default = "default_endpoint_runs")]
    pub endpoint_runs: u32,
}

fn default_endpoint_runs() -> u32 {
    1
}

fn default_iterations() -> u32 {
    10
}
fn default_isi_prompt() -> String {
    "default".to_string()
}

impl Default for IsiStageConfig {
    fn default() -> Self {
        IsiStageConfig {
            settings: Vec::new(),
            n_iterations: default_iterations(),
            review_prompt: default_isi_prompt(),
            review_backend: None,
            edit_backend: None,
            fresh_final_review: true,
            endpoint_runs: default_endpoint_runs(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct JudgeStageConfig {
    /// Judge backend; defaults to the first review-stage backend.
    #[serde(default)]
    pub backend: Option<String>,
    /// Which run index of each (model, prompt, paper) cell is judged.
    #[serde(default)]
    pub run_index: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Constant predictor for the naive baseline row.
    #[serde(default = "default_baseline")]
    pub baseline_constant: f64,
    #[serde(default)]
    pub one_sided: bool,
}

fn default_baseline() -> f64 {
    2.5
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            baseline_constant: default_baseline(),
            one_sided: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub backends: BTreeMap<String, BackendConfig>,
    pub review: ReviewStageConfig,
    #[serde(default)]
    pub isi: IsiStageConfig,
    #[serde(default)]
    pub judge: JudgeStageConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        ExperimentConfig::from_toml_str(&text)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        for name in &self.review.backends {
            if !self.backends.contains_key(name) {
                return Err(ConfigError::Invalid(format!(
                    "review backend '{name}' is not defined"
                )));
            }
        }
        for name in [&self.isi.review_backend, &self.isi.edit_backend, &self.judge.backend]
            .into_iter()
            .flatten()
        {
            if !self.backends.contains_key(name) {
                return Err(ConfigError::Invalid(format!(
                    "backend '{name}' is not defined"
                )));
            }
        }
        if self.review.backends.is_empty() {
            return Err(ConfigError::Invalid(
                "review.backends must name at least one backend".to_string(),
            ));
        }
        if self.review.n_runs == 0 {
            return Err(ConfigError::Invalid("review.n_runs must be >= 1".to_string()));
        }
        self.corpus.counter().map(|_| ())
    }

    /// Content hash of the experiment-defining configuration. The output
    /// directory is a runtime location, not experiment content, so it is
    /// excluded; everything else changes the hash iff it changes.
    pub fn config_hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.output.dir = String::new();
        let canonical =
            serde_json::to_string(&hashed).expect("config serializes to canonical JSON");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(digest)
    }

    pub fn experiment_id(&self) -> String {
        self.config_hash()[..12].to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub complete: bool,
    pub n_records: usize,
    pub n_failures: usize,
}

/// Completion markers and artifact paths for one experiment directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment_id: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageStatus>,
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load_or_new(path: &Path, config: &ExperimentConfig) -> RunManifest {
        if let Ok(text) = std::fs::read_to_string(path) {
            if let Ok(manifest) = serde_json::from_str::<RunManifest>(&text) {
                if manifest.config_hash == config.config_hash() {
                    return manifest;
                }
            }
        }
        RunManifest {
            experiment_id: config.experiment_id(),
            config_hash: config.config_hash(),
            stages: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[corpus]
root = "fixtures/corpus"

[backends.mock1]
kind = "mock"
name = "mock1"
model_name = "mock-model"
script = "mock_script.json"

[review]
backends = ["mock1"]
prompts = ["simple"]

[output]
dir = "runs/test"
"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let config = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(config.corpus.max_tokens, 130_000);
        assert_eq!(config.review.n_runs, 3);
        assert_eq!(config.isi.n_iterations, 10);
        assert_eq!(config.metrics.baseline_constant, 2.5);
        assert_eq!(config.backends["mock1"].temperature, 1.0);
    }

    #[test]
    fn hash_stable_and_content_sensitive() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let b = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());

        let changed = MINIMAL.replace("prompts = [\"simple\"]", "prompts = [\"acl\"]");
        let c = ExperimentConfig::from_toml_str(&changed).unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let moved = MINIMAL.replace("runs/test", "/tmp/elsewhere");
        let b = ExperimentConfig::from_toml_str(&moved).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn unknown_backend_rejected() {
        let bad = MINIMAL.replace("backends = [\"mock1\"]", "backends = [\"nope\"]");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn config_round_trips_through_hash_view() {
        let config = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let json = serde_json::to_string(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config.config_hash(), back.config_hash());
    }
}
