//! Unified generation over the configured providers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::config::{ApiKey, MockBehavior, ProviderProfile, Registry, WireProtocol};

pub const ANTHROPIC_VERSION: &str = "2023-06-01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.7,
            max_tokens: 2048,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err("temperature must be a non-negative number".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub provider: String,
    pub model: String,
    pub prompt: String,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationResult {
    pub text: String,
    pub latency_ms: f64,
    pub provider: String,
    pub model: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("provider `{provider}` has no model `{model}`")]
    UnknownModel { provider: String, model: String },
    #[error("provider `{0}` is unavailable: its API key is not configured")]
    Unavailable(String),
    #[error("provider rejected the credentials (HTTP {0})")]
    Unauthorized(u16),
    #[error("provider is rate limiting requests (HTTP 429) after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("provider failed with HTTP {status} after {attempts} attempts")]
    ProviderError { status: u16, attempts: u32 },
    #[error("provider did not answer within {0:?}")]
    Timeout(Duration),
    #[error("provider response has no assistant text: {0}")]
    MalformedProviderResponse(String),
    #[error("could not reach provider after {attempts} attempts: {message}")]
    Network { message: String, attempts: u32 },
}

impl GatewayError {
    /// Stable snake_case code for API payloads.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::UnknownProvider(_) => "unknown_provider",
            GatewayError::UnknownModel { .. } => "unknown_model",
            GatewayError::Unavailable(_) => "provider_unavailable",
            GatewayError::Unauthorized(_) => "unauthorized",
            GatewayError::RateLimited { .. } => "rate_limited",
            GatewayError::ProviderError { .. } => "provider_error",
            GatewayError::Timeout(_) => "timeout",
            GatewayError::MalformedProviderResponse(_) => "malformed_provider_response",
            GatewayError::Network { .. } => "network_error",
        }
    }
}

/// Outcome of one attempt, before retry policy is applied.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttemptError {
    #[error("HTTP {0}")]
    Status(u16),
    #[error("{0}")]
    Network(String),
    #[error("{0}")]
    Malformed(String),
}

impl AttemptError {
    fn retryable(&self) -> bool {
        match self {
            AttemptError::Status(s) => *s == 429 || (500..600).contains(s),
            AttemptError::Network(_) => true,
            AttemptError::Malformed(_) => false,
        }
    }
}

/// Sends one request to one provider.
#[async_trait]
pub trait Transport: Send + Sync {
    async fn send(
        &self,
        profile: &ProviderProfile,
        key: Option<&ApiKey>,
        request: &GenerationRequest,
    ) -> Result<String, AttemptError>;
}

/// Endpoint path, headers and JSON body for a protocol.
pub fn encode_request(
    protocol: WireProtocol,
    key: Option<&ApiKey>,
    request: &GenerationRequest,
) -> (&'static str, Vec<(&'static str, String)>, Value) {
    let messages = json!([{ "role": "user", "content": request.prompt }]);
    let mut headers = vec![("content-type", "application/json".to_string())];
    match protocol {
        WireProtocol::OpenaiChatCompatible => {
            if let Some(k) = key {
                headers.push(("authorization", format!("Bearer {}", k.expose())));
            }
            let body = json!({
                "model": request.model,
                "messages": messages,
                "temperature": request.params.temperature,
                "max_tokens": request.params.max_tokens,
            });
            ("chat/completions", headers, body)
        }
        WireProtocol::AnthropicMessages => {
            if let Some(k) = key {
                headers.push(("x-api-key", k.expose().to_string()));
            }
            headers.push(("anthropic-version", ANTHROPIC_VERSION.to_string()));
            let body = json!({
                "model": request.model,
                "max_tokens": request.params.max_tokens,
                "temperature": request.params.temperature,
                "messages": messages,
            });
            ("messages", headers, body)
        }
        WireProtocol::Mock => ("", headers, Value::Null),
    }
}

/// Pulls the assistant text out of a protocol response body.
pub fn decode_response(protocol: WireProtocol, body: &Value) -> Option<String> {
    match protocol {
        WireProtocol::OpenaiChatCompatible => body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string),
        WireProtocol::AnthropicMessages => {
            let blocks = body.get("content")?.as_array()?;
            let texts: Vec<&str> = blocks
                .iter()
                .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|b| b.get("text").and_then(Value::as_str))
                .collect();
            (!texts.is_empty()).then(|| texts.concat())
        }
        WireProtocol::Mock => body.as_str().map(str::to_string),
    }
}

pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        HttpTransport {
            client: reqwest::Client::new(),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

#[async_trait]
impl Transport for HttpTransport {
    async fn send(
        &self,
        profile: &ProviderProfile,
        key: Option<&ApiKey>,
        request: &GenerationRequest,
    ) -> Result<String, AttemptError> {
        let base = profile
            .base_url
            .as_deref()
            .ok_or_else(|| AttemptError::Network("provider has no base_url".into()))?;
        let (path, headers, body) = encode_request(profile.wire_protocol, key, request);
        let url = format!("{}/{path}", base.trim_end_matches('/'));
        let mut req = self.client.post(url).json(&body);
        for (name, value) in headers {
            req = req.header(name, value);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| AttemptError::Network(e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(AttemptError::Status(status.as_u16()));
        }
        let json: Value = resp
            .json()
            .await
            .map_err(|e| AttemptError::Malformed(format!("body is not JSON: {}", e.without_url())))?;
        decode_response(profile.wire_protocol, &json)
            .ok_or_else(|| AttemptError::Malformed("expected assistant text in the response".into()))
    }
}

/// Scripted provider. Each call consumes the next behavior; once the script
/// is exhausted the last behavior repeats.
pub struct MockTransport {
    script: Vec<MockBehavior>,
    cursor: Mutex<usize>,
    calls: AtomicUsize,
}

impl MockTransport {
    pub fn new(script: Vec<MockBehavior>) -> Self {
        MockTransport {
            script,
            cursor: Mutex::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of attempts served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn next(&self) -> Option<MockBehavior> {
        let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        let b = self.script.get(*cursor).or(self.script.last()).cloned();
        if *cursor < self.script.len() {
            *cursor += 1;
        }
        b
    }
}

#[async_trait]
impl Transport for MockTransport {
    async fn send(
        &self,
        _profile: &ProviderProfile,
        _key: Option<&ApiKey>,
        _request: &GenerationRequest,
    ) -> Result<String, AttemptError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.next() {
            None => Ok(String::new()),
            Some(MockBehavior::Return(t)) => Ok(t),
            Some(MockBehavior::Fail(code)) => Err(AttemptError::Status(code)),
            Some(MockBehavior::Delay(d, t)) => {
                tokio::time::sleep(d).await;
                Ok(t)
            }
        }
    }
}

struct Slot {
    transport: Arc<dyn Transport>,
    mock: Option<Arc<MockTransport>>,
    gate: Option<Arc<Semaphore>>,
}

/// The provider factory: one transport and admission gate per provider.
pub struct Gateway {
    registry: Registry,
    slots: HashMap<String, Slot>,
}

impl Gateway {
    pub fn new(registry: Registry) -> Self {
        let http: Arc<dyn Transport> = Arc::new(HttpTransport::new());
        let slots = registry
            .providers
            .iter()
            .map(|p| {
                let (transport, mock) = match p.profile.wire_protocol {
                    WireProtocol::Mock => {
                        let m = Arc::new(MockTransport::new(p.profile.script.clone()));
                        (m.clone() as Arc<dyn Transport>, Some(m))
                    }
                    _ => (http.clone(), None),
                };
                let gate = p.profile.max_concurrency.map(|n| Arc::new(Semaphore::new(n)));
                (
                    p.profile.id.clone(),
                    Slot {
                        transport,
                        mock,
                        gate,
                    },
                )
            })
            .collect();
        Gateway { registry, slots }
    }

    /// Replaces the transport of one provider.
    pub fn with_transport(mut self, provider: &str, transport: Arc<dyn Transport>) -> Self {
        if let Some(slot) = self.slots.get_mut(provider) {
            slot.transport = transport;
            slot.mock = None;
        }
        self
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// The scripted transport behind a mock provider.
    pub fn mock(&self, provider: &str) -> Option<Arc<MockTransport>> {
        self.slots.get(provider).and_then(|s| s.mock.clone())
    }

    /// Checks that the request names a known, available provider and model.
    pub fn resolve(&self, request: &GenerationRequest) -> Result<(), GatewayError> {
        let entry = self
            .registry
            .get(&request.provider)
            .ok_or_else(|| GatewayError::UnknownProvider(request.provider.clone()))?;
        if !entry.profile.has_model(&request.model) {
            return Err(GatewayError::UnknownModel {
                provider: request.provider.clone(),
                model: request.model.clone(),
            });
        }
        if !entry.available {
            return Err(GatewayError::Unavailable(request.provider.clone()));
        }
        Ok(())
    }

    pub async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        self.resolve(request)?;
        let entry = self.registry.get(&request.provider).expect("resolved");
        let slot = &self.slots[&request.provider];
        let _permit = match &slot.gate {
            Some(gate) => Some(gate.clone().acquire_owned().await.expect("gate is never closed")),
            None => None,
        };
        let started = Instant::now();
        let result = run_with_retries(&entry.profile, entry.key.as_ref(), slot.transport.as_ref(), request).await;
        let key = entry.key.as_ref().map(ApiKey::expose);
        result
            .map(|(text, attempts)| GenerationResult {
                text,
                latency_ms: started.elapsed().as_secs_f64() * 1000.0,
                provider: request.provider.clone(),
                model: request.model.clone(),
                attempts,
            })
            .map_err(|e| redact_error(e, key))
    }
}

/// Full-jitter backoff before retry number `retry` (0-based).
pub fn backoff_delay(base: Duration, retry: u32, rng: &mut impl Rng) -> Duration {
    let cap = base.saturating_mul(1u32 << retry.min(16));
    let ms = cap.as_millis().min(u64::MAX as u128) as u64;
    Duration::from_millis(rng.random_range(0..=ms))
}

async fn run_with_retries(
    profile: &ProviderProfile,
    key: Option<&ApiKey>,
    transport: &dyn Transport,
    request: &GenerationRequest,
) -> Result<(String, u32), GatewayError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let outcome = tokio::time::timeout(profile.timeout, transport.send(profile, key, request)).await;
        let err = match outcome {
            Err(_) => return Err(GatewayError::Timeout(profile.timeout)),
            Ok(Ok(text)) => return Ok((text, attempts)),
            Ok(Err(e)) => e,
        };
        if !err.retryable() || attempts > profile.max_retries {
            return Err(match err {
                AttemptError::Status(s @ (401 | 403)) => GatewayError::Unauthorized(s),
                AttemptError::Status(429) => GatewayError::RateLimited { attempts },
                AttemptError::Status(status) => GatewayError::ProviderError { status, attempts },
                AttemptError::Network(message) => GatewayError::Network { message, attempts },
                AttemptError::Malformed(m) => GatewayError::MalformedProviderResponse(m),
            });
        }
        let delay = backoff_delay(profile.backoff_base, attempts - 1, &mut rand::rng());
        tracing::debug!(provider = %profile.id, attempt = attempts, ?delay, error = %err, "retrying");
        tokio::time::sleep(delay).await;
    }
}

/// Replaces every occurrence of `key` in `text`.
pub fn redact(text: &str, key: Option<&str>) -> String {
    match key {
        Some(k) if !k.is_empty() => text.replace(k, "***"),
        _ => text.to_string(),
    }
}

fn redact_error(e: GatewayError, key: Option<&str>) -> GatewayError {
    match e {
        GatewayError::Network { message, attempts } => GatewayError::Network {
            message: redact(&message, key),
            attempts,
        },
        GatewayError::MalformedProviderResponse(m) => {
            GatewayError::MalformedProviderResponse(redact(&m, key))
        }
        other => other,
    }
}
