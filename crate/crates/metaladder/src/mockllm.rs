//! Deterministic OpenAI-compatible HTTP test double.
//!
//! Serves `/v1/chat/completions` and `/v1/completions` with honest stop
//! and `max_tokens` semantics plus a `usage` block, so the whole pipeline
//! runs offline. Behaviors:
//!
//! - `fixture_replay`: map from prompt hash (sha256 hex) to response text.
//! - `template_teacher`: parses the annotation or augmentation prompt and
//!   answers with a well-formed sectioned response whose numbers are a
//!   seeded affine transform of the originals.
//! - `scripted_student`: replays trained-format traces for a configured
//!   problem set; ids in the correct set answer the gold answer, all
//!   others answer a guaranteed-wrong one.
//!
//! Identical (behavior, request) pairs produce byte-identical responses,
//! across restarts. An admin endpoint reconfigures the behavior and
//! exposes a request log with start/end timestamps for concurrency and
//! rate-limit assertions.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Json, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grader;

pub fn prompt_hash(prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStyle {
    Metaladder,
    Cot,
}

/// The slice of a problem the scripted student needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockProblem {
    pub id: String,
    pub question: String,
    pub gold_answer: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockBehavior {
    FixtureReplay {
        fixture_map: BTreeMap<String, String>,
    },
    TemplateTeacher {
        teacher_seed: u64,
    },
    ScriptedStudent {
        student_correct_ids: BTreeSet<String>,
        student_trace_style: TraceStyle,
        problems: Vec<MockProblem>,
    },
}

impl MockBehavior {
    pub fn validate(&self) -> Result<()> {
        match self {
            MockBehavior::FixtureReplay { fixture_map } => {
                if fixture_map.is_empty() {
                    return Err(Error::MockBehavior("fixture_map is empty".into()));
                }
            }
            MockBehavior::TemplateTeacher { .. } => {}
            MockBehavior::ScriptedStudent { problems, .. } => {
                if problems.is_empty() {
                    return Err(Error::MockBehavior(
                        "scripted_student needs a problems table".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Full server configuration (startup file format).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockServerConfig {
    pub behavior: MockBehavior,
    /// When present, requests for other model names get a 404.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub served_models: Option<BTreeSet<String>>,
    /// Fixed artificial latency per request.
    #[serde(default)]
    pub delay_ms: u64,
    /// Artificial latency per generated (whitespace) token, which makes
    /// wall time scale with generation length like a real engine.
    #[serde(default)]
    pub delay_ms_per_token: u64,
}

impl MockServerConfig {
    pub fn new(behavior: MockBehavior) -> Self {
        Self {
            behavior,
            served_models: None,
            delay_ms: 0,
            delay_ms_per_token: 0,
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: MockServerConfig = serde_json::from_str(&text)?;
        cfg.behavior.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RequestLogEntry {
    pub path: String,
    pub model: String,
    pub prompt_hash: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

struct MockState {
    behavior: RwLock<MockBehavior>,
    served_models: Option<BTreeSet<String>>,
    delay_ms: u64,
    delay_ms_per_token: u64,
    started: Instant,
    log: Mutex<Vec<RequestLogEntry>>,
}

// --- deterministic generation --------------------------------------------

/// Multiply every standalone integer by the seed's multiplier, leaving
/// decimals untouched so scaled arithmetic stays consistent.
pub fn transform_numbers(text: &str, seed: u64) -> String {
    let multiplier = seed_multiplier(seed);
    let re = regex::Regex::new(r"\d+\.\d+|\d+").unwrap();
    re.replace_all(text, |caps: &regex::Captures| {
        let tok = &caps[0];
        if tok.contains('.') {
            return tok.to_string();
        }
        match tok.parse::<u128>() {
            Ok(n) => (n.saturating_mul(multiplier as u128)).to_string(),
            Err(_) => tok.to_string(),
        }
    })
    .into_owned()
}

/// Seed 7 maps to the doubling transform; multipliers stay in 2..=6.
pub fn seed_multiplier(seed: u64) -> u64 {
    let m = 1 + seed % 6;
    if m < 2 {
        2
    } else {
        m
    }
}

/// Guaranteed-wrong answer: numeric golds get +1, text golds get a suffix.
pub fn wrong_answer(gold: &str) -> String {
    if let Ok(n) = gold.trim().parse::<i128>() {
        return (n + 1).to_string();
    }
    if let Ok(x) = gold.trim().parse::<f64>() {
        return format!("{}", x + 1.0);
    }
    format!("{gold}_x")
}

/// Truncate to the first `max_tokens` whitespace-delimited tokens,
/// preserving the original bytes up to the end of the last kept token.
pub fn truncate_tokens(text: &str, max_tokens: u64) -> &str {
    if max_tokens == 0 {
        return "";
    }
    let mut count = 0u64;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token {
                count += 1;
                if count >= max_tokens {
                    return &text[..i];
                }
                in_token = false;
            }
        } else {
            in_token = true;
        }
    }
    text
}

/// Apply max-tokens then stop-sequence semantics the way a token-by-token
/// engine would: a stop only fires if it appears within the capped prefix.
/// Returns (text, finish_reason, matched_stop).
pub fn apply_stops_and_cap<'a>(
    raw: &'a str,
    stops: &[String],
    max_tokens: u64,
) -> (&'a str, &'static str, Option<String>) {
    let capped = truncate_tokens(raw, max_tokens);
    let mut earliest: Option<(usize, &str)> = None;
    for stop in stops {
        if stop.is_empty() {
            continue;
        }
        if let Some(pos) = capped.find(stop.as_str()) {
            if earliest.is_none_or(|(best, _)| pos < best) {
                earliest = Some((pos, stop));
            }
        }
    }
    if let Some((pos, stop)) = earliest {
        return (&capped[..pos], "stop", Some(stop.to_string()));
    }
    if capped.len() < raw.len() {
        (capped, "length", None)
    } else {
        (capped, "stop", None)
    }
}

const TEACHER_STRATEGY_TEXT: &str = "This is a structured math problem. The solution method involves applying the same sequence of operations to the given quantities.";
const STUDENT_STRATEGY_TEXT: &str = "This is a math word problem. The solution method involves identifying the given quantities and applying arithmetic operations step by step.";
const ANALOG_SOLUTION_TEXT: &str =
    "Applying the same method to the transformed quantities gives the scaled result.";
const FALLBACK_TEXT: &str = "UNKNOWN PROMPT";

fn section_after_last<'a>(prompt: &'a str, header: &str, until: Option<&str>) -> Option<&'a str> {
    let start = prompt.rfind(header)? + header.len();
    let rest = &prompt[start..];
    let rest = match until {
        Some(next) => match rest.find(next) {
            Some(end) => &rest[..end],
            None => rest,
        },
        None => rest,
    };
    Some(rest.trim())
}

/// Deterministic teacher completion for either teacher prompt shape.
fn teacher_response(prompt: &str, seed: u64) -> String {
    if prompt.contains("### Original Solution:") {
        // Augmentation prompt: restate the original solution as steps and
        // close with the same final answer.
        let solution =
            section_after_last(prompt, "### Original Solution:", None).unwrap_or_default();
        let answer = grader::extract_final_answer(solution)
            .unwrap_or_else(|_| "unknown".to_string());
        return format!(
            "### Augmented Solution:\n1. {}\nTherefore, the final answer is {}.",
            solution.trim(),
            answer
        );
    }
    let problem = section_after_last(
        prompt,
        "### Original Problem:",
        Some("### Solution to the Original Problem:"),
    )
    .unwrap_or_default();
    let solution =
        section_after_last(prompt, "### Solution to the Original Problem:", None)
            .unwrap_or_default();
    let mut analog_problem = transform_numbers(problem, seed);
    if analog_problem == problem {
        analog_problem.push_str(" (Consider a closely related variant.)");
    }
    let analog_solution = transform_numbers(solution, seed);
    format!(
        "### Type of Problem and Solution Method:\n{}\n\n### Similar Problem:\n{}\n\n### Solution to the Similar Problem:\n{}",
        TEACHER_STRATEGY_TEXT, analog_problem, analog_solution
    )
}

/// The final-solution text a scripted student emits for one problem.
fn student_final_solution(p: &MockProblem, correct: bool) -> String {
    let answer = if correct {
        p.gold_answer.clone()
    } else {
        wrong_answer(&p.gold_answer)
    };
    format!(
        "Working through the steps with the given values leads to the result. The answer is {}.",
        answer
    )
}

/// The full trained-format trace for one problem.
pub fn student_full_trace(p: &MockProblem, correct: bool, style: TraceStyle) -> String {
    let final_solution = student_final_solution(p, correct);
    match style {
        TraceStyle::Cot => final_solution,
        TraceStyle::Metaladder => {
            let mut analog_q = transform_numbers(&p.question, 7);
            if analog_q == p.question {
                analog_q.push_str(" (Consider a closely related variant.)");
            }
            format!(
                "{}\n\nSimilar Problem:\n{}\n\nSolution to the Similar Problem:\n{}\n\nOriginal Problem:\n{}\n\nSolution to the Original Problem:\n{}",
                STUDENT_STRATEGY_TEXT, analog_q, ANALOG_SOLUTION_TEXT, p.question, final_solution
            )
        }
    }
}

fn student_response(
    prompt: &str,
    correct_ids: &BTreeSet<String>,
    style: TraceStyle,
    problems: &[MockProblem],
) -> String {
    let Some(problem) = problems.iter().find(|p| prompt.contains(&p.question)) else {
        return FALLBACK_TEXT.to_string();
    };
    let correct = correct_ids.contains(&problem.id);
    // A prompt ending at the forced final-solution marker is the shortcut
    // continuation: emit only the final solution.
    if prompt.ends_with("Solution to the Original Problem:\n")
        || prompt.ends_with("Solution to the Original Problem:")
    {
        return student_final_solution(problem, correct);
    }
    student_full_trace(problem, correct, style)
}

/// Produce the raw (pre-stop, pre-cap) completion for a prompt under the
/// current behavior.
pub fn raw_completion(behavior: &MockBehavior, prompt: &str) -> String {
    match behavior {
        MockBehavior::FixtureReplay { fixture_map } => fixture_map
            .get(&prompt_hash(prompt))
            .cloned()
            .unwrap_or_else(|| FALLBACK_TEXT.to_string()),
        MockBehavior::TemplateTeacher { teacher_seed } => teacher_response(prompt, *teacher_seed),
        MockBehavior::ScriptedStudent {
            student_correct_ids,
            student_trace_style,
            problems,
        } => student_response(prompt, student_correct_ids, *student_trace_style, problems),
    }
}

// --- HTTP layer ------------------------------------------------------------

fn error_body(status: StatusCode, message: &str, kind: &str) -> Response {
    (
        status,
        Json(json!({ "error": { "message": message, "type": kind } })),
    )
        .into_response()
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: String,
}

#[derive(Deserialize)]
struct WireRequest {
    model: Option<String>,
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    messages: Option<Vec<WireMessage>>,
    #[serde(default)]
    max_tokens: Option<u64>,
    #[serde(default)]
    stop: Option<Vec<String>>,
}

async fn handle(
    state: Arc<MockState>,
    path: &'static str,
    chat: bool,
    body: serde_json::Value,
) -> Response {
    let started_at = state.started.elapsed().as_millis() as u64;
    let req: WireRequest = match serde_json::from_value(body) {
        Ok(r) => r,
        Err(e) => {
            return error_body(
                StatusCode::BAD_REQUEST,
                &format!("malformed request: {e}"),
                "invalid_request_error",
            )
        }
    };
    let Some(model) = req.model else {
        return error_body(
            StatusCode::BAD_REQUEST,
            "missing field: model",
            "invalid_request_error",
        );
    };
    if let Some(served) = &state.served_models {
        if !served.contains(&model) {
            return error_body(
                StatusCode::NOT_FOUND,
                &format!("model not found: {model}"),
                "model_not_found",
            );
        }
    }
    let prompt = if chat {
        match &req.messages {
            Some(msgs) if !msgs.is_empty() => msgs
                .iter()
                .map(|m| m.content.as_str())
                .collect::<Vec<_>>()
                .join("\n"),
            _ => {
                return error_body(
                    StatusCode::BAD_REQUEST,
                    "missing field: messages",
                    "invalid_request_error",
                )
            }
        }
    } else {
        match req.prompt {
            Some(p) => p,
            None => {
                return error_body(
                    StatusCode::BAD_REQUEST,
                    "missing field: prompt",
                    "invalid_request_error",
                )
            }
        }
    };

    let raw = {
        let behavior = state.behavior.read().unwrap();
        raw_completion(&behavior, &prompt)
    };
    let stops = req.stop.unwrap_or_default();
    let max_tokens = req.max_tokens.unwrap_or(u64::MAX);
    let (text, finish_reason, matched_stop) = apply_stops_and_cap(&raw, &stops, max_tokens);

    let prompt_tokens = crate::client::whitespace_tokens(&prompt);
    let completion_tokens = crate::client::whitespace_tokens(text);

    let total_delay = state.delay_ms + state.delay_ms_per_token * completion_tokens;
    if total_delay > 0 {
        tokio::time::sleep(Duration::from_millis(total_delay)).await;
    }

    let hash = prompt_hash(&prompt);
    let choice = if chat {
        json!({
            "index": 0,
            "message": { "role": "assistant", "content": text },
            "finish_reason": finish_reason,
            "matched_stop": matched_stop,
        })
    } else {
        json!({
            "index": 0,
            "text": text,
            "finish_reason": finish_reason,
            "matched_stop": matched_stop,
        })
    };
    let body = json!({
        "id": format!("mock-{}", &hash[..12]),
        "object": if chat { "chat.completion" } else { "text_completion" },
        "model": model,
        "choices": [choice],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens,
        },
    });

    let ended_at = state.started.elapsed().as_millis() as u64;
    state.log.lock().unwrap().push(RequestLogEntry {
        path: path.to_string(),
        model,
        prompt_hash: hash,
        start_ms: started_at,
        end_ms: ended_at,
    });

    Json(body).into_response()
}

async fn chat_completions(
    State(state): State<Arc<MockState>>,
    Json(body): Json<serde_json::Value>,
) -> Response {
    handle(state, "/v1/chat/completions", true, body).await
}

async fn completions(
    State(state): State<Arc<MockState>>,
    Json(body): Json<serde_json::Value>,
) -> Response {
    handle(state, "/v1/completions", false, body).await
}

async fn configure(
    State(state): State<Arc<MockState>>,
    Json(body): Json<serde_json::Value>,
) -> Response {
    let behavior: MockBehavior = match serde_json::from_value(body) {
        Ok(b) => b,
        Err(e) => {
            return error_body(
                StatusCode::BAD_REQUEST,
                &format!("invalid behavior: {e}"),
                "invalid_request_error",
            )
        }
    };
    if let Err(e) = behavior.validate() {
        return error_body(
            StatusCode::BAD_REQUEST,
            &format!("invalid behavior: {e}"),
            "invalid_request_error",
        );
    }
    *state.behavior.write().unwrap() = behavior;
    Json(json!({ "status": "ok" })).into_response()
}

async fn request_log(State(state): State<Arc<MockState>>) -> Response {
    let log = state.log.lock().unwrap().clone();
    Json(json!({ "requests": log })).into_response()
}

async fn reset_log(State(state): State<Arc<MockState>>) -> Response {
    state.log.lock().unwrap().clear();
    Json(json!({ "status": "ok" })).into_response()
}

async fn health() -> Response {
    Json(json!({ "status": "ok" })).into_response()
}

fn build_router(config: MockServerConfig) -> Router {
    let state = Arc::new(MockState {
        behavior: RwLock::new(config.behavior),
        served_models: config.served_models,
        delay_ms: config.delay_ms,
        delay_ms_per_token: config.delay_ms_per_token,
        started: Instant::now(),
        log: Mutex::new(Vec::new()),
    });
    Router::new()
        .route("/v1/chat/completions", post(chat_completions))
        .route("/v1/completions", post(completions))
        .route("/admin/configure", post(configure))
        .route("/admin/log", get(request_log))
        .route("/admin/reset", post(reset_log))
        .route("/health", get(health))
        .with_state(state)
}

/// Handle to an in-process server; shuts down on drop.
pub struct MockServerHandle {
    pub base_url: String,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockServerHandle {
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Start the server on a background thread. Port 0 picks a free port; the
/// bound address is reflected in `base_url`.
pub fn spawn(config: MockServerConfig, port: u16) -> Result<MockServerHandle> {
    config.behavior.validate()?;
    let (addr_tx, addr_rx) = std::sync::mpsc::channel::<std::io::Result<SocketAddr>>();
    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .expect("build tokio runtime");
        rt.block_on(async move {
            let listener = match tokio::net::TcpListener::bind(("127.0.0.1", port)).await {
                Ok(l) => l,
                Err(e) => {
                    let _ = addr_tx.send(Err(e));
                    return;
                }
            };
            let addr = listener.local_addr().expect("local addr");
            let _ = addr_tx.send(Ok(addr));
            let app = build_router(config);
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = shutdown_rx.await;
                })
                .await
                .expect("serve");
        });
    });
    let addr = addr_rx
        .recv()
        .map_err(|_| Error::Other("mock server thread died before binding".into()))?
        .map_err(|e| Error::Other(format!("bind failed: {e}")))?;
    Ok(MockServerHandle {
        base_url: format!("http://{addr}"),
        shutdown: Some(shutdown_tx),
        thread: Some(thread),
    })
}

/// Run the server in the foreground (the `mock-serve` subcommand).
pub fn serve_blocking(config: MockServerConfig, port: u16) -> Result<()> {
    config.behavior.validate()?;
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Other(format!("tokio runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(|e| Error::Other(format!("bind failed: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Error::io("socket", e))?;
        println!("listening on http://{addr}");
        let app = build_router(config);
        axum::serve(listener, app)
            .await
            .map_err(|e| Error::Other(format!("serve: {e}")))
    })
}
