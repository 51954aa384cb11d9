//! Uniform adapter contract over chat-completion providers.
//!
//! Remote failures are values, never panics or early returns: every
//! [`Provider::complete`] call yields a [`ProviderResult`], so one failing
//! request cannot abort a batch.

mod http;
mod mock;
mod schema;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{ChatMessage, ModelSpec};

pub use http::{HttpProvider, HttpProviderConfig};
pub use mock::{MockCall, MockConfig, MockProvider, MOCK_PROVIDER_ID};
pub use schema::{FieldType, SettingField, SettingsSchema};

/// Default provider table shipped with the crate.
pub const DEFAULT_PROVIDERS_JSON: &str = include_str!("../../config/providers.default.json");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    RateLimited,
    Auth,
    Network,
    BadRequest,
    #[default]
    ProviderInternal,
    Timeout,
}

impl ErrorKind {
    pub fn is_retryable(self) -> bool {
        !matches!(self, ErrorKind::Auth | ErrorKind::BadRequest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderError {
    pub kind: ErrorKind,
    pub message: String,
    pub retryable: bool,
}

impl ProviderError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        ProviderError {
            kind,
            message: message.into(),
            retryable: kind.is_retryable(),
        }
    }

    pub fn from_status(status: u16, body: &str) -> Self {
        let kind = match status {
            429 => ErrorKind::RateLimited,
            401 | 403 => ErrorKind::Auth,
            408 => ErrorKind::Timeout,
            400..=499 => ErrorKind::BadRequest,
            _ => ErrorKind::ProviderInternal,
        };
        let snippet: String = body.chars().take(300).collect();
        ProviderError::new(kind, format!("HTTP {status}: {snippet}"))
    }
}

impl std::fmt::Display for ProviderError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderRequest {
    pub model: ModelSpec,
    pub messages: Vec<ChatMessage>,
    pub generation_index: u32,
}

impl ProviderRequest {
    /// The last user message, i.e. the prompt being asked.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == crate::planner::Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderResult {
    pub outcome: Result<String, ProviderError>,
    pub usage: Option<Usage>,
    pub latency: Duration,
}

impl ProviderResult {
    pub fn text(text: impl Into<String>, latency: Duration) -> Self {
        ProviderResult {
            outcome: Ok(text.into()),
            usage: None,
            latency,
        }
    }

    pub fn error(error: ProviderError, latency: Duration) -> Self {
        ProviderResult {
            outcome: Err(error),
            usage: None,
            latency,
        }
    }
}

/// Configuration problems. These are the only provider failures that stop a
/// run before it starts.
#[derive(Debug, Error)]
pub enum ProviderConfigError {
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("provider `{provider}` has no setting `{key}`")]
    UnknownSetting { provider: String, key: String },
    #[error("provider `{provider}` setting `{key}`: {reason}")]
    InvalidSetting {
        provider: String,
        key: String,
        reason: String,
    },
    #[error("missing API key for provider `{provider}`: set the environment variable {var}")]
    MissingKey { provider: String, var: String },
    #[error("invalid provider config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[async_trait]
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;

    fn settings_schema(&self) -> SettingsSchema;

    /// Requests per minute; `None` means unlimited.
    fn rate_limit_rpm(&self) -> Option<u32> {
        None
    }

    /// Fails when the provider cannot possibly serve requests (e.g. a
    /// missing credential).
    fn check_ready(&self) -> Result<(), ProviderConfigError> {
        Ok(())
    }

    async fn complete(&self, request: &ProviderRequest) -> ProviderResult;
}

/// `FORGE_<PROVIDER>_KEY`, with the provider id upper-cased and every
/// non-alphanumeric character replaced by `_`.
pub fn key_env_var(provider_id: &str) -> String {
    let id: String = provider_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("FORGE_{id}_KEY")
}

/// API keys from the environment, optionally overridden by a dotenv file.
#[derive(Debug, Clone, Default)]
pub struct Credentials {
    overrides: BTreeMap<String, String>,
    use_env: bool,
}

impl Credentials {
    pub fn from_env() -> Self {
        Credentials {
            overrides: BTreeMap::new(),
            use_env: true,
        }
    }

    /// No environment lookup; only explicitly supplied keys.
    pub fn isolated() -> Self {
        Credentials::default()
    }

    pub fn with_key(mut self, var: impl Into<String>, value: impl Into<String>) -> Self {
        self.overrides.insert(var.into(), value.into());
        self
    }

    pub fn with_dotenv(mut self, path: &Path) -> Result<Self, ProviderConfigError> {
        let iter = dotenvy::from_path_iter(path).map_err(|e| ProviderConfigError::Invalid(format!(
            "keys file {}: {e}",
            path.display()
        )))?;
        for item in iter {
            let (k, v) = item.map_err(|e| {
                ProviderConfigError::Invalid(format!("keys file {}: {e}", path.display()))
            })?;
            self.overrides.insert(k, v);
        }
        Ok(self)
    }

    pub fn lookup(&self, var: &str) -> Option<String> {
        if let Some(v) = self.overrides.get(var) {
            return Some(v.clone());
        }
        if self.use_env {
            std::env::var(var).ok().filter(|v| !v.is_empty())
        } else {
            None
        }
    }
}

/// Top-level provider registry file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegistryConfig {
    #[serde(default)]
    pub providers: Vec<HttpProviderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer_model: Option<ModelSpec>,
}

impl RegistryConfig {
    pub fn defaults() -> Self {
        serde_json::from_str(DEFAULT_PROVIDERS_JSON).expect("bundled provider defaults parse")
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProviderConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| ProviderConfigError::Invalid(format!("{}: {e}", path.display())))
    }

    /// Entries in `other` replace same-id entries here.
    pub fn merge(mut self, other: RegistryConfig) -> Self {
        for p in other.providers {
            self.providers.retain(|q| q.id != p.id);
            self.providers.push(p);
        }
        if other.mock.is_some() {
            self.mock = other.mock;
        }
        if other.scorer_model.is_some() {
            self.scorer_model = other.scorer_model;
        }
        self
    }
}

#[derive(Clone, Default)]
pub struct ProviderRegistry {
    providers: BTreeMap<String, Arc<dyn Provider>>,
    scorer_model: Option<ModelSpec>,
}

impl std::fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderRegistry")
            .field("providers", &self.providers.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl ProviderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A registry holding only the default mock provider.
    pub fn with_mock(config: MockConfig) -> Self {
        let mut r = Self::new();
        r.register(Arc::new(MockProvider::new(MOCK_PROVIDER_ID, config)));
        r
    }

    pub fn from_config(config: &RegistryConfig, credentials: &Credentials) -> Self {
        let mut r = Self::with_mock(config.mock.clone().unwrap_or_default());
        for p in &config.providers {
            let key = p
                .auth_header
                .as_ref()
                .and_then(|_| credentials.lookup(&key_env_var(&p.id)));
            r.register(Arc::new(HttpProvider::new(p.clone(), key)));
        }
        r.scorer_model = config.scorer_model.clone().or_else(|| {
            config
                .providers
                .iter()
                .find(|p| !p.model_names.is_empty())
                .map(|p| ModelSpec::new(p.id.clone(), p.model_names[0].clone()))
        });
        r
    }

    pub fn register(&mut self, provider: Arc<dyn Provider>) {
        self.providers.insert(provider.id().to_string(), provider);
    }

    pub fn set_scorer_model(&mut self, model: ModelSpec) {
        self.scorer_model = Some(model);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn Provider>, ProviderConfigError> {
        self.providers
            .get(id)
            .cloned()
            .ok_or_else(|| ProviderConfigError::UnknownProvider(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.providers.keys().map(String::as_str)
    }

    pub fn settings_schema(&self, provider_id: &str) -> Result<SettingsSchema, ProviderConfigError> {
        Ok(self.get(provider_id)?.settings_schema())
    }

    /// Returns the model with canonical settings, ready to be hashed.
    pub fn canonicalize(&self, model: &ModelSpec) -> Result<ModelSpec, ProviderConfigError> {
        let schema = self.settings_schema(&model.provider)?;
        Ok(ModelSpec {
            settings: schema.canonicalize(&model.settings)?,
            ..model.clone()
        })
    }

    /// The model used by LLM scorers that don't name one: the configured
    /// scorer model (or the first configured remote model, else the mock),
    /// at temperature 0.
    pub fn default_scorer_model(&self) -> ModelSpec {
        let base = self
            .scorer_model
            .clone()
            .unwrap_or_else(|| ModelSpec::new(MOCK_PROVIDER_ID, "mock-scorer"));
        let mut m = base;
        m.settings
            .insert("temperature".into(), serde_json::Value::from(0.0));
        if m.alias.is_empty() {
            m.alias = format!("{} (scorer)", m.model);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_var_names() {
        assert_eq!(key_env_var("openai"), "FORGE_OPENAI_KEY");
        assert_eq!(key_env_var("my-local.llm"), "FORGE_MY_LOCAL_LLM_KEY");
    }

    #[test]
    fn retryability_follows_kind() {
        assert!(ProviderError::new(ErrorKind::RateLimited, "").retryable);
        assert!(ProviderError::new(ErrorKind::Timeout, "").retryable);
        assert!(ProviderError::new(ErrorKind::Network, "").retryable);
        assert!(!ProviderError::new(ErrorKind::Auth, "").retryable);
        assert!(!ProviderError::new(ErrorKind::BadRequest, "").retryable);
        assert_eq!(ProviderError::from_status(429, "").kind, ErrorKind::RateLimited);
        assert_eq!(ProviderError::from_status(401, "").kind, ErrorKind::Auth);
        assert_eq!(ProviderError::from_status(422, "").kind, ErrorKind::BadRequest);
        assert_eq!(
            ProviderError::from_status(503, "").kind,
            ErrorKind::ProviderInternal
        );
    }

    #[test]
    fn bundled_defaults_parse() {
        let cfg = RegistryConfig::defaults();
        assert!(!cfg.providers.is_empty());
        for p in &cfg.providers {
            assert!(p.rate_limit_rpm.is_some(), "{} has no default rate limit", p.id);
        }
    }

    #[test]
    fn dotenv_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("keys.env");
        std::fs::write(&path, "FORGE_ACME_KEY=sk-test\n# comment\n").unwrap();
        let creds = Credentials::isolated().with_dotenv(&path).unwrap();
        assert_eq!(creds.lookup("FORGE_ACME_KEY").as_deref(), Some("sk-test"));
        assert_eq!(creds.lookup("FORGE_OTHER_KEY"), None);
    }

    #[test]
    fn registry_reports_missing_key() {
        let cfg: RegistryConfig = serde_json::from_str(
            r#"{"providers":[{"id":"acme","base_url":"http://127.0.0.1:9","auth_header":"Authorization","model_names":["a1"],"rate_limit_rpm":10}]}"#,
        )
        .unwrap();
        let reg = ProviderRegistry::from_config(&cfg, &Credentials::isolated());
        match reg.get("acme").unwrap().check_ready() {
            Err(ProviderConfigError::MissingKey { var, .. }) => assert_eq!(var, "FORGE_ACME_KEY"),
            other => panic!("unexpected {other:?}"),
        }
        let reg = ProviderRegistry::from_config(
            &cfg,
            &Credentials::isolated().with_key("FORGE_ACME_KEY", "k"),
        );
        assert!(reg.get("acme").unwrap().check_ready().is_ok());
        assert_eq!(reg.default_scorer_model().provider, "acme");
    }

    #[test]
    fn unknown_provider_schema() {
        let reg = ProviderRegistry::with_mock(MockConfig::default());
        assert!(matches!(
            reg.settings_schema("nope"),
            Err(ProviderConfigError::UnknownProvider(_))
        ));
    }
}
