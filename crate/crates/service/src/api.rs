//! REST routes: reasoning runs, meta reasoning, re-rendering and the
//! lookup endpoints the UI is populated from.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{MatchedPath, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use reasongraph_core::{
    analyze, build_meta_prompt, build_prompt, emit, has_errors, parse, parse_meta_selection,
    trace_stats, validate_trace, Analysis, DiagramDocument, Diagnostic, GrammarError,
    MethodParams, RawModelOutput, ReasoningMethod, ReasoningTrace, TraceStats,
    VisualizationConfig,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::{ServeDir, ServeFile};

use crate::gateway::{Gateway, GatewayError, GenerationParams, GenerationRequest};

#[derive(Clone)]
pub struct AppState {
    pub gateway: Arc<Gateway>,
    /// Directory with the built UI; a placeholder page is served without it.
    pub static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(gateway: Gateway) -> Self {
        AppState {
            gateway: Arc::new(gateway),
            static_dir: None,
        }
    }

    pub fn with_static_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.static_dir = Some(dir.into());
        self
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasonRequest {
    pub question: String,
    pub method: ReasoningMethod,
    pub provider: String,
    pub model: String,
    #[serde(default)]
    pub method_params: MethodParams,
    #[serde(default)]
    pub generation_params: GenerationParams,
    #[serde(default)]
    pub viz_config: VisualizationConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaReasonRequest {
    pub question: String,
    pub provider: String,
    pub model: String,
    #[serde(default)]
    pub method_params: MethodParams,
    #[serde(default)]
    pub generation_params: GenerationParams,
    #[serde(default)]
    pub viz_config: VisualizationConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub trace: Value,
    #[serde(default)]
    pub viz_config: VisualizationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub generation_ms: f64,
    pub parse_ms: f64,
    pub emit_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonResponse {
    pub raw_output: String,
    /// `None` when the output contained no reasoning elements.
    pub trace: Option<ReasoningTrace>,
    /// Mermaid flowchart text; empty without a trace.
    pub diagram: String,
    pub diagnostics: Vec<Diagnostic>,
    pub analysis: Option<Analysis>,
    pub stats: Option<TraceStats>,
    pub method_used: ReasoningMethod,
    /// Raw text of the method-selection call; set only by meta reasoning.
    pub selection_output: Option<String>,
    pub timing: Timing,
}

/// JSON error response: `{"error": {"code", "message"}, ...extra}`.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub extra: Option<(&'static str, Value)>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            extra: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let status = match &e {
            GatewayError::UnknownProvider(_) | GatewayError::UnknownModel { .. } => StatusCode::NOT_FOUND,
            GatewayError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
            _ => StatusCode::BAD_GATEWAY,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<GrammarError> for ApiError {
    fn from(e: GrammarError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": { "code": self.code, "message": self.message } });
        if let Some((k, v)) = self.extra {
            body[k] = v;
        }
        (self.status, Json(body)).into_response()
    }
}

fn read_json<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

struct Run<'a> {
    question: &'a str,
    method: ReasoningMethod,
    provider: &'a str,
    model: &'a str,
    generation_params: &'a GenerationParams,
    viz_config: &'a VisualizationConfig,
}

impl Run<'_> {
    fn request(&self, prompt: String) -> GenerationRequest {
        GenerationRequest {
            provider: self.provider.to_string(),
            model: self.model.to_string(),
            prompt,
            params: self.generation_params.clone(),
        }
    }
}

fn check_settings(
    params: &MethodParams,
    generation: &GenerationParams,
    viz: &VisualizationConfig,
) -> Result<(), ApiError> {
    params.validate()?;
    generation.validate().map_err(ApiError::bad_request)?;
    viz.validate().map_err(|e| ApiError::bad_request(e.to_string()))
}

/// Generation, parsing, analysis and emission for one method.
async fn run_method(gateway: &Gateway, run: &Run<'_>, prompt: String) -> Result<ReasonResponse, ApiError> {
    let started = Instant::now();
    let generated = gateway.generate(&run.request(prompt)).await?;
    let generation_ms = ms_since(started);
    Ok(finish(generated.text, run, generation_ms))
}

/// Turns raw model output into a response. Non-conforming output is still a
/// success: the raw text is returned with the diagnostics.
fn finish(raw_output: String, run: &Run<'_>, generation_ms: f64) -> ReasonResponse {
    let started = Instant::now();
    let raw = RawModelOutput::new(raw_output, run.method, run.question);
    let parsed = parse(&raw);
    let RawModelOutput { text: raw_output, .. } = raw;
    let (trace, analysis, diagnostics) = match parsed {
        Ok(p) => {
            let analyzed = analyze(p.trace);
            let mut diagnostics = p.diagnostics;
            diagnostics.extend(analyzed.diagnostics);
            (Some(analyzed.trace), analyzed.analysis, diagnostics)
        }
        Err(e) => (None, None, e.diagnostics()),
    };
    let parse_ms = ms_since(started);
    let started = Instant::now();
    let diagram = trace
        .as_ref()
        .map(|t| emit(t, run.viz_config).expect("config validated").text)
        .unwrap_or_default();
    let emit_ms = ms_since(started);
    ReasonResponse {
        raw_output,
        stats: trace.as_ref().map(trace_stats),
        trace,
        diagram,
        diagnostics,
        analysis,
        method_used: run.method,
        selection_output: None,
        timing: Timing {
            generation_ms,
            parse_ms,
            emit_ms,
        },
    }
}

async fn reason(State(state): State<AppState>, body: Bytes) -> Result<Json<ReasonResponse>, ApiError> {
    let req: ReasonRequest = read_json(&body)?;
    check_settings(&req.method_params, &req.generation_params, &req.viz_config)?;
    let prompt = build_prompt(req.method, &req.question, &req.method_params)?;
    let run = Run {
        question: &req.question,
        method: req.method,
        provider: &req.provider,
        model: &req.model,
        generation_params: &req.generation_params,
        viz_config: &req.viz_config,
    };
    state.gateway.resolve(&run.request(String::new()))?;
    Ok(Json(run_method(&state.gateway, &run, prompt).await?))
}

async fn meta_reason(State(state): State<AppState>, body: Bytes) -> Result<Json<ReasonResponse>, ApiError> {
    let req: MetaReasonRequest = read_json(&body)?;
    check_settings(&req.method_params, &req.generation_params, &req.viz_config)?;
    let meta_prompt = build_meta_prompt(&req.question)?;
    let mut run = Run {
        question: &req.question,
        method: ReasoningMethod::ChainOfThoughts,
        provider: &req.provider,
        model: &req.model,
        generation_params: &req.generation_params,
        viz_config: &req.viz_config,
    };
    state.gateway.resolve(&run.request(String::new()))?;

    let started = Instant::now();
    let selection = state.gateway.generate(&run.request(meta_prompt)).await?;
    let selection_ms = ms_since(started);
    let method = parse_meta_selection(&selection.text).map_err(|e| ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        code: "meta_selection_failed",
        message: e.to_string(),
        extra: Some(("raw_output", Value::String(selection.text.clone()))),
    })?;
    run.method = method;
    let prompt = build_prompt(method, &req.question, &req.method_params)?;
    let mut response = run_method(&state.gateway, &run, prompt).await?;
    response.timing.generation_ms += selection_ms;
    response.selection_output = Some(selection.text);
    Ok(Json(response))
}

async fn render(body: Bytes) -> Result<Json<DiagramDocument>, ApiError> {
    let req: RenderRequest = read_json(&body)?;
    let trace: ReasoningTrace = serde_json::from_value(req.trace)
        .map_err(|e| ApiError::bad_request(format!("invalid trace: {e}")))?;
    let diagnostics = validate_trace(&trace);
    if has_errors(&diagnostics) {
        let mut err = ApiError::new(StatusCode::BAD_REQUEST, "invalid_trace", "trace fails validation");
        err.extra = Some(("diagnostics", serde_json::to_value(&diagnostics).expect("serializable")));
        return Err(err);
    }
    emit(&trace, &req.viz_config)
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", e.to_string()))
}

fn param(name: &str, default: Option<u32>, description: &str) -> Value {
    json!({
        "name": name,
        "type": "integer",
        "minimum": 1,
        "default": default,
        "description": description,
    })
}

/// Parameters each method's prompt uses.
pub fn method_params_schema(method: ReasoningMethod) -> Vec<Value> {
    let d = MethodParams::default();
    match method {
        ReasoningMethod::ChainOfThoughts => vec![],
        ReasoningMethod::SelfRefine => vec![param(
            "max_refinements",
            Some(d.max_refinements),
            "reflection and improvement rounds",
        )],
        ReasoningMethod::LeastToMost => vec![param(
            "num_subquestions_hint",
            None,
            "number of sub-questions to ask for; omit to let the model decide",
        )],
        ReasoningMethod::SelfConsistency => vec![param(
            "num_chains",
            Some(d.num_chains),
            "independent reasoning chains to sample",
        )],
        ReasoningMethod::TreeOfThoughts => {
            vec![param("max_depth", Some(d.max_depth), "maximum tree depth")]
        }
        ReasoningMethod::BeamSearch => vec![
            param("beam_width", Some(d.beam_width), "nodes kept per level"),
            param("max_depth", Some(d.max_depth), "number of levels"),
        ],
    }
}

async fn methods() -> Json<Value> {
    let list: Vec<Value> = ReasoningMethod::ALL
        .iter()
        .map(|&m| {
            json!({
                "method": m,
                "display_name": m.display_name(),
                "params": method_params_schema(m),
            })
        })
        .collect();
    Json(Value::Array(list))
}

async fn providers(State(state): State<AppState>) -> Json<Value> {
    let list: Vec<Value> = state
        .gateway
        .registry()
        .providers
        .iter()
        .map(|p| {
            json!({
                "id": p.profile.id,
                "wire_protocol": p.profile.wire_protocol.as_str(),
                "models": p.profile.models,
                "available": p.available,
            })
        })
        .collect();
    Json(Value::Array(list))
}

const PLACEHOLDER_PAGE: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>reasongraph</title></head>
<body>
<h1>reasongraph</h1>
<p>The web UI is not installed. Start the server with <code>--static-dir</code> pointing at the built UI.</p>
<p>API: <code>POST /api/reason</code>, <code>POST /api/meta-reason</code>, <code>POST /api/render</code>,
<code>GET /api/methods</code>, <code>GET /api/providers</code>.</p>
</body></html>
";

async fn placeholder() -> Html<&'static str> {
    Html(PLACEHOLDER_PAGE)
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let route = req
        .extensions()
        .get::<MatchedPath>()
        .map(|p| p.as_str().to_string())
        .unwrap_or_else(|| req.uri().path().to_string());
    let started = Instant::now();
    let response = next.run(req).await;
    tracing::info!(
        target: "reasongraph::http",
        method = %method,
        route = %route,
        status = response.status().as_u16(),
        latency_ms = format!("{:.2}", ms_since(started)),
        "request"
    );
    response
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/reason", post(reason))
        .route("/api/meta-reason", post(meta_reason))
        .route("/api/render", post(render))
        .route("/api/methods", get(methods))
        .route("/api/providers", get(providers))
        .route("/api/{*rest}", axum::routing::any(api_not_found));
    let site = match &state.static_dir {
        Some(dir) => Router::new().fallback_service(
            ServeDir::new(dir).not_found_service(ServeFile::new(dir.join("index.html"))),
        ),
        None => Router::new().route("/", get(placeholder)),
    };
    api.merge(site)
        .layer(middleware::from_fn(log_requests))
        .layer(axum::extract::DefaultBodyLimit::max(8 * 1024 * 1024))
        .with_state(state)
}
