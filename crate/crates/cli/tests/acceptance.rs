//! Acceptance run. Every criterion prints one PASS or FAIL line; the test
//! fails if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::rngs::StdRng;
use rand::SeedableRng;
use reasongraph_core::synth::{print_trace, random_trace, SynthConfig};
use reasongraph_core::{
    analyze, best_beam_path, emit, has_errors, majority_vote, parse, validate_diagram,
    DiagnosticCode, ParseError, RawModelOutput, ReasoningMethod, VisualizationConfig,
};
use reasongraph_service::{
    mock_provider, router, AppState, Gateway, MockBehavior, MockTransport, Registry,
};
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn round_trip() -> Outcome {
    let started = Instant::now();
    let mut total = 0;
    for (m, method) in ReasoningMethod::ALL.into_iter().enumerate() {
        let mut rng = StdRng::seed_from_u64(0xacc0 + m as u64);
        for i in 0..1000 {
            let t = random_trace(method, &mut rng, &SynthConfig::default());
            let question = t.question().map(|q| q.label.clone()).unwrap_or_default();
            let text = print_trace(&t);
            let parsed = parse(&RawModelOutput::new(text, method, question))
                .map_err(|e| format!("{method:?} #{i}: {e:?}"))?;
            ensure!(!has_errors(&parsed.diagnostics), "{method:?} #{i}: {:?}", parsed.diagnostics);
            ensure!(parsed.trace == t, "{method:?} #{i}: trace differs after round trip");
            total += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{total} traces, 100% exact, {:.2}s", elapsed.as_secs_f64()))
}

fn beam_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xacc1);
    let mut greedy_gaps = 0;
    for i in 0..500 {
        let case = common::random_beam(&mut rng, 4, 4);
        let (path, total) = common::beam_oracle(&case);
        let got = best_beam_path(&case.trace).map_err(|e| format!("case {i}: {e:?}"))?;
        ensure!(
            (got.total - total as f64 / 100.0).abs() < 1e-9,
            "case {i}: total {} vs oracle {}",
            got.total,
            total as f64 / 100.0
        );
        ensure!(got.path == path, "case {i}: path {:?} vs oracle {path:?}", got.path);
        greedy_gaps += usize::from(common::greedy_path(&case.trace) != path);
    }
    let ab = common::ab_example();
    let best = best_beam_path(&ab).map_err(|e| format!("A/B example: {e:?}"))?;
    ensure!(best.path == ["B", "D"], "A/B example picked {:?}", best.path);
    ensure!(common::greedy_path(&ab) == ["A", "C"], "A/B example: greedy should pick A, C");
    Ok(format!("500/500 match, A/B optimum beats greedy, {greedy_gaps} random greedy gaps"))
}

fn vote_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xacc2);
    let mut ties = 0;
    for i in 0..500 {
        let answers = common::random_answers(&mut rng);
        let want = common::vote_oracle(&answers);
        let got = majority_vote(&common::vote_trace(&answers))
            .map_err(|e| format!("case {i}: {e:?}"))?;
        ensure!(got.winner == want.winner, "case {i}: winner {:?} vs {:?}", got.winner, want.winner);
        ensure!(got.tie == want.tie, "case {i}: tie flag {} vs {}", got.tie, want.tie);
        ensure!(
            got.counts.len() == want.counts.len()
                && want.counts.iter().all(|(k, v)| got.counts.get(k) == Some(v)),
            "case {i}: counts {:?} vs {:?}",
            got.counts,
            want.counts
        );
        ties += usize::from(want.tie);
    }
    Ok(format!("500/500 match, {ties} ties"))
}

fn emit_latency() -> Outcome {
    let t = common::hundred_node_trace();
    let config = VisualizationConfig::default();
    let mut times = Vec::with_capacity(100);
    for _ in 0..100 {
        let started = Instant::now();
        std::hint::black_box(emit(&t, &config).map_err(|e| format!("{e:?}"))?);
        times.push(started.elapsed());
    }
    times.sort();
    let median = times[50];
    ensure!(median < Duration::from_millis(50), "median {median:?}");
    Ok(format!("median {:.3} ms over 100 runs", median.as_secs_f64() * 1e3))
}

fn fuzz() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xacc3);
    let mut slowest = Duration::ZERO;
    let (mut traces, mut rejected) = (0, 0);
    for round in 0..10_000 {
        let method = ReasoningMethod::ALL[round % 6];
        let text = common::fuzz_input(&mut rng, method, round / 6);
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| {
            parse(&RawModelOutput::new(text.clone(), method, "fuzz"))
        }))
        .map_err(|_| format!("input {round} panicked: {text:?}"))?;
        slowest = slowest.max(started.elapsed());
        match result {
            Ok(parsed) => {
                ensure!(
                    parsed.diagnostics.iter().all(|d| d.code != DiagnosticCode::NoElements),
                    "input {round}: trace returned with a NoElements diagnostic"
                );
                traces += 1;
            }
            Err(ParseError::NoElements { .. }) => rejected += 1,
        }
    }
    ensure!(slowest < Duration::from_secs(1), "slowest input took {slowest:?}");
    Ok(format!(
        "10000 inputs, {traces} traces, {rejected} NoElements, slowest {:.1} ms",
        slowest.as_secs_f64() * 1e3
    ))
}

fn diagram_validity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xacc4);
    let config = VisualizationConfig::default();
    for i in 0..1000 {
        let t = analyze(random_trace(ReasoningMethod::ALL[i % 6], &mut rng, &SynthConfig::default())).trace;
        let doc = emit(&t, &config).map_err(|e| format!("trace {i}: {e:?}"))?;
        let problems = validate_diagram(&doc);
        ensure!(problems.is_empty(), "trace {i}: {problems:?}");
    }
    for g in common::goldens() {
        let path = common::golden_dir().join(format!("{}.mmd", g.name));
        let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        for run in 0..3 {
            ensure!(common::render_golden(&g) == want, "golden {} differs on run {run}", g.name);
        }
    }
    Ok("1000 valid diagrams, 3 goldens byte-identical".into())
}

const COT_OUTPUT: &str = "<step>7 times 8 is 7 added eight times</step>\n<step>that gives 56</step>\n<final_answer>56</final_answer>";

const RESPONSE_KEYS: &[&str] = &[
    "analysis", "diagnostics", "diagram", "method_used", "raw_output", "selection_output",
    "stats", "timing", "trace",
];

fn mock_app(script: Vec<MockBehavior>) -> (Router, Arc<MockTransport>) {
    let mut profile = mock_provider(script);
    profile.max_retries = 2;
    let gateway = Gateway::new(Registry::from_profiles(vec![profile], |_| None).expect("mock registry"));
    let mock = gateway.mock("mock").expect("mock transport");
    (router(AppState::new(gateway)), mock)
}

async fn post(router: &Router, path: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::builder()
        .method("POST")
        .uri(path)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn check_shape(v: &Value) -> Result<(), String> {
    let obj = v.as_object().ok_or("response is not an object")?;
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    ensure!(keys == RESPONSE_KEYS, "response keys {keys:?}");
    for k in ["generation_ms", "parse_ms", "emit_ms"] {
        ensure!(v["timing"][k].as_f64().is_some_and(|x| x >= 0.0), "timing.{k} missing");
    }
    Ok(())
}

async fn end_to_end() -> Outcome {
    let reason = json!({"question": "What is 7*8?", "method": "chain_of_thoughts", "provider": "mock", "model": "mock"});
    let meta = json!({"question": "What is 7*8?", "provider": "mock", "model": "mock"});

    let (app, _) = mock_app(vec![MockBehavior::Return(COT_OUTPUT.into())]);
    let (status, v) = post(&app, "/api/reason", reason.clone()).await;
    ensure!(status == StatusCode::OK, "success: status {status}");
    check_shape(&v)?;
    ensure!(v["diagnostics"] == json!([]), "success: diagnostics {}", v["diagnostics"]);
    ensure!(v["trace"]["nodes"].as_array().map(Vec::len) == Some(4), "success: node count");
    ensure!(v["diagram"].as_str().is_some_and(|d| d.starts_with("flowchart TD")), "success: diagram");

    let (app, _) = mock_app(vec![MockBehavior::Return("no tags here".into())]);
    let (status, v) = post(&app, "/api/reason", reason.clone()).await;
    ensure!(status == StatusCode::OK, "non-conforming: status {status}");
    check_shape(&v)?;
    ensure!(v["trace"].is_null() && v["diagram"] == "", "non-conforming: trace should be null");
    ensure!(v["raw_output"] == "no tags here", "non-conforming: raw output");
    ensure!(v["diagnostics"][0]["code"] == "no_elements", "non-conforming: {}", v["diagnostics"]);

    let (app, _) = mock_app(vec![MockBehavior::Return("I would pick something".into())]);
    let (status, v) = post(&app, "/api/meta-reason", meta.clone()).await;
    ensure!(status == StatusCode::UNPROCESSABLE_ENTITY, "meta failure: status {status}");
    ensure!(v["error"]["code"] == "meta_selection_failed", "meta failure: {v}");
    ensure!(v["raw_output"] == "I would pick something", "meta failure: raw output");

    let (app, _) = mock_app(vec![
        MockBehavior::Return("<selected_method>chain_of_thoughts</selected_method>".into()),
        MockBehavior::Return(COT_OUTPUT.into()),
    ]);
    let (status, v) = post(&app, "/api/meta-reason", meta).await;
    ensure!(status == StatusCode::OK, "meta success: status {status}");
    check_shape(&v)?;
    ensure!(v["method_used"] == "chain_of_thoughts", "meta success: {}", v["method_used"]);

    let (app, mock) = mock_app(vec![
        MockBehavior::Fail(429),
        MockBehavior::Fail(503),
        MockBehavior::Return(COT_OUTPUT.into()),
    ]);
    let (status, v) = post(&app, "/api/reason", reason).await;
    ensure!(status == StatusCode::OK, "retry: status {status}");
    check_shape(&v)?;
    ensure!(mock.calls() == 3, "retry: {} provider calls", mock.calls());

    Ok("success 200, non-conforming 200, meta failure 422, meta success 200, retry 200 after 3 calls".into())
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
    match outcome {
        Ok(detail) => {
            println!("PASS  {name:<22} {detail}");
            true
        }
        Err(why) => {
            println!("FAIL  {name:<22} {why}");
            false
        }
    }
}

fn main() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let results = [
        run("round-trip", round_trip),
        run("beam-path oracle", beam_oracle),
        run("majority-vote oracle", vote_oracle),
        run("emission latency", emit_latency),
        run("parser robustness", fuzz),
        run("diagram validity", diagram_validity),
        run("end-to-end mock", || rt.block_on(end_to_end())),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
