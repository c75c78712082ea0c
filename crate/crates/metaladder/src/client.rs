//! Blocking OpenAI-compatible HTTP client shared by the annotator and the
//! inference runner: chat and raw completions, retry with backoff, an
//! optional requests-per-minute cap, and a bounded-parallelism map that
//! preserves input order.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

/// What the endpoint said about stop sequences. Real engines differ:
/// some report the matched stop string, some always omit the field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopSignal {
    /// The endpoint does not report stop matches at all.
    Unreported,
    /// The field was present and null: generation ended without a stop.
    NotMatched,
    /// This stop string fired.
    Matched(String),
}

/// One generation result, normalized across the chat and completions
/// endpoints.
#[derive(Debug, Clone)]
pub struct Generation {
    pub text: String,
    pub finish_reason: String,
    pub stop_signal: StopSignal,
    pub usage: Option<Usage>,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    stop: Vec<String>,
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    stop: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ApiChoice {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    message: Option<ApiMessage>,
    #[serde(default)]
    finish_reason: Option<String>,
    /// Kept as a raw value to distinguish an absent field (`None`) from an
    /// explicit null (`Some(Null)`). Some engines call this `stop_reason`.
    #[serde(default, alias = "stop_reason", deserialize_with = "present_value")]
    matched_stop: Option<serde_json::Value>,
}

fn present_value<'de, D>(de: D) -> std::result::Result<Option<serde_json::Value>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    serde_json::Value::deserialize(de).map(Some)
}

fn stop_signal(raw: Option<serde_json::Value>) -> StopSignal {
    match raw {
        None => StopSignal::Unreported,
        Some(serde_json::Value::Null) => StopSignal::NotMatched,
        Some(serde_json::Value::String(s)) => StopSignal::Matched(s),
        Some(_) => StopSignal::Unreported,
    }
}

#[derive(Debug, Deserialize)]
struct ApiMessage {
    #[serde(default)]
    content: String,
}

#[derive(Debug, Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

/// Compute how long a caller must wait before issuing the next request so
/// that no `window` ever holds more than `cap` requests. Pure so the
/// schedule is testable without wall-clock sleeps.
pub fn rpm_wait(
    stamps: &VecDeque<Instant>,
    cap: u32,
    window: Duration,
    now: Instant,
) -> Option<Duration> {
    let live = stamps
        .iter()
        .filter(|t| now.duration_since(**t) < window)
        .count();
    if (live as u32) < cap {
        return None;
    }
    let oldest_live = stamps
        .iter()
        .find(|t| now.duration_since(**t) < window)
        .copied()?;
    Some(window - now.duration_since(oldest_live))
}

/// Sliding-window request limiter. The production window is one minute;
/// tests shrink it to keep wall time sane.
pub struct RpmLimiter {
    cap: u32,
    window: Duration,
    stamps: Mutex<VecDeque<Instant>>,
}

impl RpmLimiter {
    pub fn new(cap: u32) -> Self {
        Self::with_window(cap, Duration::from_secs(60))
    }

    pub fn with_window(cap: u32, window: Duration) -> Self {
        Self {
            cap,
            window,
            stamps: Mutex::new(VecDeque::new()),
        }
    }

    /// Block until a request slot is available, then claim it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut stamps = self.stamps.lock().unwrap();
                let now = Instant::now();
                while let Some(front) = stamps.front() {
                    if now.duration_since(*front) >= self.window {
                        stamps.pop_front();
                    } else {
                        break;
                    }
                }
                match rpm_wait(&stamps, self.cap, self.window, now) {
                    None => {
                        stamps.push_back(now);
                        return;
                    }
                    Some(w) => w,
                }
            };
            std::thread::sleep(wait);
        }
    }
}

/// Client for one OpenAI-compatible endpoint.
pub struct LlmClient {
    http: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    max_retries: u32,
    limiter: Option<RpmLimiter>,
}

impl LlmClient {
    pub fn new(
        base_url: &str,
        api_key: Option<String>,
        max_retries: u32,
        requests_per_minute_cap: Option<u32>,
    ) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            http,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            max_retries,
            limiter: requests_per_minute_cap.map(RpmLimiter::new),
        })
    }

    fn post_json(&self, path: &str, body: &serde_json::Value) -> Result<ApiResponse> {
        let url = format!("{}{}", self.base_url, path);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let mut req = self.http.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let outcome = match req.send() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.text().unwrap_or_default();
                    if status == 401 || status == 403 {
                        return Err(Error::Auth { status, body: text });
                    }
                    if status >= 400 {
                        Err(Error::Endpoint { status, body: text })
                    } else {
                        serde_json::from_str::<ApiResponse>(&text).map_err(Error::Json)
                    }
                }
                Err(e) => Err(Error::Transport {
                    attempts,
                    last: e.to_string(),
                }),
            };
            match outcome {
                Ok(parsed) => return Ok(parsed),
                Err(e) if e.is_retryable() && attempts <= self.max_retries => {
                    std::thread::sleep(Duration::from_millis(50 * 2u64.pow(attempts.min(6))));
                }
                Err(e) => {
                    if e.is_retryable() {
                        return Err(Error::Transport {
                            attempts,
                            last: e.to_string(),
                        });
                    }
                    return Err(e);
                }
            }
        }
    }

    fn first_generation(mut resp: ApiResponse) -> Result<Generation> {
        if resp.choices.is_empty() {
            return Err(Error::Other("endpoint returned no choices".into()));
        }
        let choice = resp.choices.remove(0);
        let text = choice
            .text
            .or(choice.message.map(|m| m.content))
            .unwrap_or_default();
        Ok(Generation {
            text,
            finish_reason: choice.finish_reason.unwrap_or_else(|| "stop".into()),
            stop_signal: stop_signal(choice.matched_stop),
            usage: resp.usage.take(),
        })
    }

    /// POST /v1/chat/completions with a single user message.
    pub fn chat(
        &self,
        model: &str,
        user_content: &str,
        temperature: f64,
        max_tokens: u32,
        stop: Vec<String>,
    ) -> Result<Generation> {
        let body = serde_json::to_value(ChatRequest {
            model,
            messages: vec![ChatMessage {
                role: "user",
                content: user_content,
            }],
            temperature,
            max_tokens,
            stop,
        })?;
        Self::first_generation(self.post_json("/v1/chat/completions", &body)?)
    }

    /// POST /v1/completions: raw-prompt continuation.
    pub fn complete(
        &self,
        model: &str,
        prompt: &str,
        temperature: f64,
        max_tokens: u32,
        stop: Vec<String>,
    ) -> Result<Generation> {
        let body = serde_json::to_value(CompletionRequest {
            model,
            prompt,
            temperature,
            max_tokens,
            stop,
        })?;
        Self::first_generation(self.post_json("/v1/completions", &body)?)
    }
}

/// Run `f` over `items` on at most `parallelism` worker threads, returning
/// results in input order.
pub fn bounded_parallel_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let parallelism = parallelism.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..parallelism {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

/// Whitespace-token count, the approximation used when an endpoint does
/// not report usage.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
