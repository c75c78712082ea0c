//! Student-model generation: full mode emits the whole trained sequence;
//! shortcut mode stops generation at the analog-section boundary, injects
//! the restated problem, and continues straight to the final solution.

use serde::{Deserialize, Serialize};

use crate::client::{whitespace_tokens, LlmClient};
use crate::composer::{self, MARKER_ORIGINAL_PROBLEM, MARKER_ORIGINAL_SOLUTION, MARKER_SIMILAR_PROBLEM};
use crate::corpus::Problem;
use crate::error::{Error, Result};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    Full,
    Shortcut,
}

impl std::str::FromStr for InferenceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(InferenceMode::Full),
            "shortcut" => Ok(InferenceMode::Shortcut),
            other => Err(Error::Config(format!("unknown inference mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InferenceMode::Full => write!(f, "full"),
            InferenceMode::Shortcut => write!(f, "shortcut"),
        }
    }
}

/// Student endpoint configuration. Greedy decoding is the only supported
/// mode; it goes out on the wire as temperature 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudentConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_decoding")]
    pub decoding: Decoding,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_decoding() -> Decoding {
    Decoding::Greedy
}
fn default_max_tokens() -> u32 {
    2048
}
fn default_parallelism() -> usize {
    4
}
fn default_retries() -> u32 {
    2
}

impl StudentConfig {
    pub fn new(endpoint_url: &str, model_name: &str) -> Self {
        Self {
            endpoint_url: endpoint_url.to_string(),
            model_name: model_name.to_string(),
            decoding: Decoding::Greedy,
            max_output_tokens: default_max_tokens(),
            parallelism: default_parallelism(),
            max_retries: default_retries(),
        }
    }

    pub fn client(&self) -> Result<LlmClient> {
        LlmClient::new(
            &self.endpoint_url,
            std::env::var("STUDENT_API_KEY").ok(),
            self.max_retries,
            None,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenCountSource {
    EndpointUsage,
    WhitespaceApprox,
}

/// One generation trace with per-phase text and token accounting.
/// `full_trace` is always `phase1_text + injected_text + phase2_text`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceResult {
    pub problem_id: String,
    pub mode: InferenceMode,
    pub phase1_text: String,
    pub injected_text: String,
    pub phase2_text: String,
    pub full_trace: String,
    pub generated_token_count: u64,
    pub token_count_source: TokenCountSource,
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_answer_raw: Option<String>,
    #[serde(default)]
    pub truncated: bool,
    /// Set when shortcut phase 1 ended without reaching the analog-section
    /// boundary; the phase-1 text is then the whole trace.
    #[serde(default)]
    pub no_shortcut_boundary: bool,
}

fn extract_from_trace(trace: &str) -> Option<String> {
    let sections = composer::parse_response_sections(trace).ok()?;
    crate::grader::extract_final_answer(&sections.final_solution).ok()
}

fn usage_tokens(gen: &crate::client::Generation) -> (u64, TokenCountSource) {
    match &gen.usage {
        Some(u) => (u.completion_tokens, TokenCountSource::EndpointUsage),
        None => (whitespace_tokens(&gen.text), TokenCountSource::WhitespaceApprox),
    }
}

/// Single-pass generation of the whole trained sequence.
pub fn infer_full(problem: &Problem, cfg: &StudentConfig) -> Result<InferenceResult> {
    let client = cfg.client()?;
    infer_full_with(problem, cfg, &client)
}

pub fn infer_full_with(
    problem: &Problem,
    cfg: &StudentConfig,
    client: &LlmClient,
) -> Result<InferenceResult> {
    let prompt = prompts::render_instruction(&problem.question);
    let started = std::time::Instant::now();
    let gen = client.complete(
        &cfg.model_name,
        &prompt,
        0.0,
        cfg.max_output_tokens,
        Vec::new(),
    )?;
    let wall_time_ms = started.elapsed().as_millis() as u64;
    let (tokens, source) = usage_tokens(&gen);
    let extracted = extract_from_trace(&gen.text);
    Ok(InferenceResult {
        problem_id: problem.id.clone(),
        mode: InferenceMode::Full,
        phase1_text: gen.text.clone(),
        injected_text: String::new(),
        phase2_text: String::new(),
        full_trace: gen.text,
        generated_token_count: tokens,
        token_count_source: source,
        wall_time_ms,
        extracted_answer_raw: extracted,
        truncated: gen.finish_reason == "length",
        no_shortcut_boundary: false,
    })
}

/// The text force-fed between the captured strategy and phase 2.
pub fn injection_text(question: &str) -> String {
    format!(
        "\n\n{}\n{}\n\n{}\n",
        MARKER_ORIGINAL_PROBLEM, question, MARKER_ORIGINAL_SOLUTION
    )
}

/// Did phase 1 stop at the analog-section boundary? Trust the endpoint's
/// stop report when it gives one; endpoints that never report stops get a
/// heuristic: the boundary was hit unless the text was truncated at the
/// cap or already ran through a final-solution section.
fn stop_boundary_hit(gen: &crate::client::Generation) -> bool {
    use crate::client::StopSignal;
    match &gen.stop_signal {
        StopSignal::Matched(s) => s == MARKER_SIMILAR_PROBLEM,
        StopSignal::NotMatched => false,
        StopSignal::Unreported => {
            gen.finish_reason != "length" && !gen.text.contains(MARKER_ORIGINAL_SOLUTION)
        }
    }
}

/// Two-phase shortcut decoding: capture the strategy via the stop
/// boundary, inject the restated problem, continue to the final solution.
pub fn infer_shortcut(problem: &Problem, cfg: &StudentConfig) -> Result<InferenceResult> {
    let client = cfg.client()?;
    infer_shortcut_with(problem, cfg, &client)
}

pub fn infer_shortcut_with(
    problem: &Problem,
    cfg: &StudentConfig,
    client: &LlmClient,
) -> Result<InferenceResult> {
    let prompt = prompts::render_instruction(&problem.question);
    let started = std::time::Instant::now();
    let phase1 = client.complete(
        &cfg.model_name,
        &prompt,
        0.0,
        cfg.max_output_tokens,
        vec![MARKER_SIMILAR_PROBLEM.to_string()],
    )?;
    let (phase1_tokens, source1) = usage_tokens(&phase1);

    if !stop_boundary_hit(&phase1) {
        let wall_time_ms = started.elapsed().as_millis() as u64;
        let extracted = extract_from_trace(&phase1.text);
        return Ok(InferenceResult {
            problem_id: problem.id.clone(),
            mode: InferenceMode::Shortcut,
            phase1_text: phase1.text.clone(),
            injected_text: String::new(),
            phase2_text: String::new(),
            full_trace: phase1.text,
            generated_token_count: phase1_tokens,
            token_count_source: source1,
            wall_time_ms,
            extracted_answer_raw: extracted,
            truncated: phase1.finish_reason == "length",
            no_shortcut_boundary: true,
        });
    }

    let injected = injection_text(&problem.question);
    let continuation_prompt = format!("{}{}{}", prompt, phase1.text, injected);
    let phase2 = client.complete(
        &cfg.model_name,
        &continuation_prompt,
        0.0,
        cfg.max_output_tokens,
        Vec::new(),
    )?;
    let wall_time_ms = started.elapsed().as_millis() as u64;
    let (phase2_tokens, source2) = usage_tokens(&phase2);
    let source = if source1 == TokenCountSource::EndpointUsage
        && source2 == TokenCountSource::EndpointUsage
    {
        TokenCountSource::EndpointUsage
    } else {
        TokenCountSource::WhitespaceApprox
    };
    let full_trace = format!("{}{}{}", phase1.text, injected, phase2.text);
    let extracted = extract_from_trace(&full_trace);
    Ok(InferenceResult {
        problem_id: problem.id.clone(),
        mode: InferenceMode::Shortcut,
        phase1_text: phase1.text,
        injected_text: injected,
        phase2_text: phase2.text,
        full_trace,
        generated_token_count: phase1_tokens + phase2_tokens,
        token_count_source: source,
        wall_time_ms,
        extracted_answer_raw: extracted,
        truncated: phase2.finish_reason == "length",
        no_shortcut_boundary: false,
    })
}

/// Per-problem outcome of a batch run; transport failures after retries
/// are carried, not dropped.
#[derive(Debug)]
pub enum BatchItem {
    Done(InferenceResult),
    Failed { problem_id: String, error: String },
}

/// Run one mode over a problem set with bounded parallelism; results come
/// back in input order. Each problem's two shortcut phases run
/// sequentially on one worker.
pub fn infer_batch(problems: &[Problem], cfg: &StudentConfig, mode: InferenceMode) -> Result<Vec<BatchItem>> {
    let client = cfg.client()?;
    Ok(crate::client::bounded_parallel_map(
        problems,
        cfg.parallelism,
        |_, problem| {
            let result = match mode {
                InferenceMode::Full => infer_full_with(problem, cfg, &client),
                InferenceMode::Shortcut => infer_shortcut_with(problem, cfg, &client),
            };
            match result {
                Ok(r) => BatchItem::Done(r),
                Err(e) => BatchItem::Failed {
                    problem_id: problem.id.clone(),
                    error: e.to_string(),
                },
            }
        },
    ))
}

/// Write inference results as JSONL.
pub fn write_results(results: &[InferenceResult], path: &std::path::Path) -> Result<()> {
    use std::io::Write as _;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injection_contains_both_markers_once() {
        let inj = injection_text("What is 2+2?");
        assert_eq!(inj.matches(MARKER_ORIGINAL_PROBLEM).count(), 2);
        // "Original Problem:" appears inside "Solution to the Original
        // Problem:" as a substring; as standalone lines each occurs once.
        assert_eq!(inj.matches("\n\nOriginal Problem:\n").count(), 1);
        assert_eq!(inj.matches(MARKER_ORIGINAL_SOLUTION).count(), 1);
        assert!(inj.ends_with(":\n"));
    }

    #[test]
    fn mode_parses() {
        assert_eq!("full".parse::<InferenceMode>().unwrap(), InferenceMode::Full);
        assert_eq!(
            "shortcut".parse::<InferenceMode>().unwrap(),
            InferenceMode::Shortcut
        );
        assert!("both".parse::<InferenceMode>().is_err());
    }
}
