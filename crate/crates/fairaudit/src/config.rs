//! Run configuration: one JSON file drives cohort synthesis, generation,
//! and the audit. A SHA-256 hash of the canonical serialized form is stamped
//! into every output manifest so artifacts can be traced to their settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AuditError, Result};
use crate::gateway::{GenerationConfig, MockProfile};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub id: String,
    /// Chat-completions endpoint URL; mutually exclusive with `mock_profile`.
    pub endpoint: Option<String>,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    /// Built-in generator name (null_bias, dear_sex_bias, role_accommodation).
    pub mock_profile: Option<String>,
    pub mock_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            id: "mock-null".to_string(),
            endpoint: None,
            api_key_env: None,
            mock_profile: Some("null_bias".to_string()),
            mock_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub size: usize,
    pub seed: u64,
    /// Directory of SSA `yobNNNN.txt` files; bundled samples when absent.
    pub ssa_dir: Option<String>,
    /// Census surname CSV; bundled sample when absent.
    pub census_file: Option<String>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            size: 504,
            seed: 2024,
            ssa_dir: None,
            census_file: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub alpha: f64,
    pub test_family_size: usize,
    /// Vocabulary-size override; selected from corpus length when absent.
    pub vocab_k: Option<usize>,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            alpha: 0.05,
            test_family_size: crate::stats::DEFAULT_TEST_FAMILY_SIZE,
            vocab_k: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub cohort: CohortConfig,
    pub generation: GenerationConfig,
    pub audit: AuditConfig,
}

impl RunConfig {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<RunConfig> {
        let content = std::fs::read_to_string(path.as_ref())?;
        let config: RunConfig = serde_json::from_str(&content)
            .map_err(|e| AuditError::Config(format!("{}: {e}", path.as_ref().display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.id.trim().is_empty() {
            return Err(AuditError::Config("model.id must be non-empty".into()));
        }
        match (&self.model.endpoint, &self.model.mock_profile) {
            (Some(_), Some(_)) => {
                return Err(AuditError::Config(
                    "model.endpoint and model.mock_profile are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(AuditError::Config(
                    "one of model.endpoint or model.mock_profile is required".into(),
                ))
            }
            (None, Some(profile)) => {
                if MockProfile::parse(profile).is_none() {
                    return Err(AuditError::Config(format!(
                        "unknown mock_profile `{profile}`"
                    )));
                }
            }
            (Some(url), None) => {
                if !url.starts_with("http://") && !url.starts_with("https://") {
                    return Err(AuditError::Config(format!(
                        "model.endpoint `{url}` is not an http(s) URL"
                    )));
                }
            }
        }
        if self.cohort.size < 12 {
            return Err(AuditError::Config(
                "cohort.size must cover all 12 demographic cells".into(),
            ));
        }
        if !(0.0 < self.audit.alpha && self.audit.alpha < 1.0) {
            return Err(AuditError::Config("audit.alpha must be in (0, 1)".into()));
        }
        if self.audit.test_family_size == 0 {
            return Err(AuditError::Config(
                "audit.test_family_size must be positive".into(),
            ));
        }
        self.generation.validate()
    }

    /// SHA-256 of the canonical JSON serialization, hex-encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn endpoint_and_mock_are_exclusive() {
        let mut config = RunConfig::default();
        config.model.endpoint = Some("https://example.test/v1/chat".into());
        assert!(config.validate().is_err());
        config.model.mock_profile = None;
        config.validate().unwrap();
        config.model.endpoint = None;
        assert!(config.validate().is_err());
    }

    #[test]
    fn unknown_mock_profile_is_rejected() {
        let mut config = RunConfig::default();
        config.model.mock_profile = Some("surprise".into());
        assert!(config.validate().is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.cohort.seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(
            &path,
            r#"{"model": {"id": "demo", "mock_profile": "dear_sex_bias"}}"#,
        )
        .unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.model.id, "demo");
        assert_eq!(config.cohort.size, 504);
        assert_eq!(config.generation.per_seed_count, 500);
    }

    #[test]
    fn malformed_json_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(AuditError::Config(_))
        ));
    }
}
