//! Provider configuration and the registry loaded from it.
//!
//! The config is TOML with one `[[provider]]` table per endpoint. Secrets
//! never live in the file: each provider names the environment variable
//! that holds its key.

use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "REASONGRAPH_CONFIG";

pub const DEFAULT_TIMEOUT_SECS: f64 = 120.0;
pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const DEFAULT_BACKOFF_BASE_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireProtocol {
    OpenaiChatCompatible,
    AnthropicMessages,
    Mock,
}

impl WireProtocol {
    pub fn as_str(self) -> &'static str {
        match self {
            WireProtocol::OpenaiChatCompatible => "openai_chat_compatible",
            WireProtocol::AnthropicMessages => "anthropic_messages",
            WireProtocol::Mock => "mock",
        }
    }
}

/// One canned mock response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockBehavior {
    Return(String),
    Fail(u16),
    Delay(Duration, String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMockStep {
    text: Option<String>,
    status: Option<u16>,
    delay_ms: Option<u64>,
}

impl TryFrom<RawMockStep> for MockBehavior {
    type Error = String;

    fn try_from(s: RawMockStep) -> Result<Self, String> {
        match (s.text, s.status, s.delay_ms) {
            (Some(t), None, None) => Ok(MockBehavior::Return(t)),
            (Some(t), None, Some(ms)) => Ok(MockBehavior::Delay(Duration::from_millis(ms), t)),
            (None, Some(code), None) if (100..=599).contains(&code) => Ok(MockBehavior::Fail(code)),
            (None, Some(code), None) => Err(format!("status {code} is not an HTTP status")),
            _ => Err("a script step needs either `text` (optionally with `delay_ms`) or `status`".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderProfile {
    pub id: String,
    pub wire_protocol: WireProtocol,
    pub base_url: Option<String>,
    pub auth_env_var: Option<String>,
    pub models: Vec<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    /// Maximum in-flight requests; `None` is unlimited.
    pub max_concurrency: Option<usize>,
    pub script: Vec<MockBehavior>,
}

impl ProviderProfile {
    pub fn has_model(&self, model: &str) -> bool {
        self.models.iter().any(|m| m == model)
    }
}

/// A scripted mock profile with id `mock` and model `mock`.
pub fn mock_provider(script: Vec<MockBehavior>) -> ProviderProfile {
    ProviderProfile {
        id: "mock".into(),
        wire_protocol: WireProtocol::Mock,
        base_url: None,
        auth_env_var: None,
        models: vec!["mock".into()],
        timeout: Duration::from_secs_f64(DEFAULT_TIMEOUT_SECS),
        max_retries: DEFAULT_MAX_RETRIES,
        backoff_base: Duration::ZERO,
        max_concurrency: None,
        script,
    }
}

/// A key read from the environment. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        ApiKey(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone)]
pub struct ProviderEntry {
    pub profile: ProviderProfile,
    pub key: Option<ApiKey>,
    pub available: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    pub providers: Vec<ProviderEntry>,
    /// Load-time warnings, e.g. unset key variables.
    pub warnings: Vec<String>,
}

impl Registry {
    pub fn get(&self, id: &str) -> Option<&ProviderEntry> {
        self.providers.iter().find(|p| p.profile.id == id)
    }

    /// Registry over already-built profiles; keys are looked up with `env`.
    pub fn from_profiles(
        profiles: Vec<ProviderProfile>,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Registry, ConfigError> {
        let mut reg = Registry::default();
        for profile in profiles {
            if reg.get(&profile.id).is_some() {
                return Err(ConfigError::DuplicateProviderId {
                    id: profile.id,
                    line: None,
                });
            }
            let key = profile
                .auth_env_var
                .as_deref()
                .and_then(&env)
                .filter(|k| !k.trim().is_empty())
                .map(ApiKey);
            let available = match (&profile.auth_env_var, &key) {
                (Some(var), None) => {
                    reg.warnings.push(format!(
                        "provider `{}` is unavailable: environment variable {var} is not set",
                        profile.id
                    ));
                    false
                }
                _ => true,
            };
            reg.providers.push(ProviderEntry {
                profile,
                key,
                available,
            });
        }
        Ok(reg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("malformed config{}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default(), field.as_ref().map(|f| format!(" ({f})")).unwrap_or_default())]
    MalformedConfig {
        line: Option<usize>,
        field: Option<String>,
        message: String,
    },
    #[error("duplicate provider id `{id}`{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    DuplicateProviderId { id: String, line: Option<usize> },
    #[error("cannot read config {path}: {message}")]
    Unreadable { path: String, message: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    provider: Vec<RawProvider>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProvider {
    id: toml::Spanned<String>,
    wire_protocol: String,
    base_url: Option<String>,
    auth_env_var: Option<String>,
    models: Vec<String>,
    timeout: Option<f64>,
    max_retries: Option<u32>,
    backoff_base_ms: Option<u64>,
    max_concurrency: Option<usize>,
    #[serde(default)]
    script: Vec<RawMockStep>,
}

fn line_of(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a config document. `env` resolves key variables.
pub fn load_registry(text: &str, env: impl Fn(&str) -> Option<String>) -> Result<Registry, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::MalformedConfig {
        line: e.span().map(|s| line_of(text, s.start)),
        field: None,
        message: e.message().to_string(),
    })?;
    let mut profiles: Vec<ProviderProfile> = Vec::new();
    for (i, p) in raw.provider.into_iter().enumerate() {
        let line = Some(line_of(text, p.id.span().start));
        let bad = |field: &str, message: String| ConfigError::MalformedConfig {
            line,
            field: Some(format!("provider[{i}].{field}")),
            message,
        };
        let id = p.id.into_inner();
        if id.trim().is_empty() {
            return Err(bad("id", "must not be empty".into()));
        }
        if profiles.iter().any(|q| q.id == id) {
            return Err(ConfigError::DuplicateProviderId { id, line });
        }
        let wire_protocol = match p.wire_protocol.as_str() {
            "openai_chat_compatible" => WireProtocol::OpenaiChatCompatible,
            "anthropic_messages" => WireProtocol::AnthropicMessages,
            "mock" => WireProtocol::Mock,
            "google" | "gemini" | "google_generative_ai" => {
                return Err(bad(
                    "wire_protocol",
                    "Google-style endpoints are not supported yet".into(),
                ))
            }
            other => {
                return Err(bad(
                    "wire_protocol",
                    format!("unknown protocol `{other}`; expected openai_chat_compatible, anthropic_messages or mock"),
                ))
            }
        };
        if p.models.is_empty() || p.models.iter().any(|m| m.trim().is_empty()) {
            return Err(bad("models", "must list at least one non-empty model id".into()));
        }
        let timeout = p.timeout.unwrap_or(DEFAULT_TIMEOUT_SECS);
        if !(timeout.is_finite() && timeout > 0.0) {
            return Err(bad("timeout", "must be a positive number of seconds".into()));
        }
        let max_retries = p.max_retries.unwrap_or(DEFAULT_MAX_RETRIES);
        if max_retries > 10 {
            return Err(bad("max_retries", "must be at most 10".into()));
        }
        if p.max_concurrency == Some(0) {
            return Err(bad("max_concurrency", "must be at least 1".into()));
        }
        match (&p.base_url, wire_protocol) {
            (None, WireProtocol::Mock) => {}
            (None, _) => return Err(bad("base_url", "is required for HTTP providers".into())),
            (Some(url), _) => match reqwest::Url::parse(url) {
                Ok(u) if matches!(u.scheme(), "http" | "https") => {}
                _ => return Err(bad("base_url", format!("`{url}` is not an http(s) URL"))),
            },
        }
        if wire_protocol != WireProtocol::Mock {
            if p.auth_env_var.is_none() {
                return Err(bad("auth_env_var", "is required for HTTP providers".into()));
            }
            if !p.script.is_empty() {
                return Err(bad("script", "only mock providers take a script".into()));
            }
        }
        let script = p
            .script
            .into_iter()
            .enumerate()
            .map(|(k, s)| MockBehavior::try_from(s).map_err(|m| bad(&format!("script[{k}]"), m)))
            .collect::<Result<Vec<_>, _>>()?;
        profiles.push(ProviderProfile {
            id,
            wire_protocol,
            base_url: p.base_url,
            auth_env_var: p.auth_env_var,
            models: p.models,
            timeout: Duration::from_secs_f64(timeout),
            max_retries,
            backoff_base: Duration::from_millis(p.backoff_base_ms.unwrap_or(DEFAULT_BACKOFF_BASE_MS)),
            max_concurrency: p.max_concurrency,
            script,
        });
    }
    Registry::from_profiles(profiles, env)
}

/// Reads `path` and resolves keys from the process environment.
pub fn load_registry_file(path: &Path) -> Result<Registry, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_registry(&text, |var| std::env::var(var).ok())
}
