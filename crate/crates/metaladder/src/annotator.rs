//! Teacher-side annotation: render the annotation and answer-augmentation
//! prompts, call an OpenAI-compatible teacher endpoint, and parse the
//! sectioned responses into [`ReflectiveAnnotation`] values. Runs are
//! checkpointed per problem so they resume without re-calling the teacher.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::LazyLock;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::client::{bounded_parallel_map, LlmClient};
use crate::corpus::Problem;
use crate::error::{Error, Result};
use crate::grader;
use crate::prompts;

/// The teacher-synthesized reflective triple (strategy, analog question,
/// analog solution), plus the optional externally supplied reflection text
/// used by the refaug-style formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectiveAnnotation {
    pub problem_id: String,
    pub strategy: String,
    pub analog_question: String,
    pub analog_solution: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analog_answer_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<String>,
    pub teacher_model: String,
    pub teacher_temperature: f64,
}

/// Teacher endpoint configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_minute_cap: Option<u32>,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> u32 {
    2048
}
fn default_retries() -> u32 {
    2
}
fn default_parallelism() -> usize {
    4
}

impl TeacherConfig {
    pub fn new(endpoint_url: &str, model_name: &str) -> Self {
        Self {
            endpoint_url: endpoint_url.to_string(),
            model_name: model_name.to_string(),
            temperature: default_temperature(),
            max_output_tokens: default_max_tokens(),
            max_retries: default_retries(),
            parallelism: default_parallelism(),
            requests_per_minute_cap: None,
        }
    }

    fn client(&self) -> Result<LlmClient> {
        LlmClient::new(
            &self.endpoint_url,
            std::env::var("TEACHER_API_KEY").ok(),
            self.max_retries,
            self.requests_per_minute_cap,
        )
    }
}

/// Render the annotation prompt for one problem.
pub fn render_annotation_prompt(problem: &Problem) -> String {
    prompts::render_annotation_prompt_text(&problem.question, &problem.gold_solution)
}

/// Render the answer-augmentation prompt for one problem.
pub fn render_augment_prompt(problem: &Problem) -> String {
    prompts::render_augment_prompt_text(&problem.question, &problem.gold_solution)
}

pub const HEADER_STRATEGY: &str = "### Type of Problem and Solution Method:";
pub const HEADER_SIMILAR_PROBLEM: &str = "### Similar Problem:";
pub const HEADER_SIMILAR_SOLUTION: &str = "### Solution to the Similar Problem:";
pub const HEADER_AUGMENTED_SOLUTION: &str = "### Augmented Solution:";

static HEADER_RES: LazyLock<[(Regex, &'static str); 3]> = LazyLock::new(|| {
    // Sampled teachers drift on hash count, colon, and spacing; the body
    // text is the anchor.
    let make = |body: &str| {
        Regex::new(&format!(r"(?m)^#{{0,4}}\s*{}\s*:?[ \t]*$", regex::escape(body))).unwrap()
    };
    [
        (
            make("Type of Problem and Solution Method"),
            HEADER_STRATEGY,
        ),
        (make("Similar Problem"), HEADER_SIMILAR_PROBLEM),
        (
            make("Solution to the Similar Problem"),
            HEADER_SIMILAR_SOLUTION,
        ),
    ]
});

static AUGMENT_HEADER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^#{0,4}\s*Augmented Solution\s*:?[ \t]*$").unwrap()
});

/// Split a teacher response on the three annotation headers. The sections
/// must appear in order; each must be non-empty.
pub fn split_annotation_sections(output: &str) -> Result<(String, String, String)> {
    let mut spans = Vec::with_capacity(3);
    let mut search_from = 0;
    for (re, canonical) in HEADER_RES.iter() {
        let m = re
            .find_at(output, search_from)
            .ok_or_else(|| Error::ParseFailure(canonical.to_string()))?;
        spans.push((m.start(), m.end(), *canonical));
        search_from = m.end();
    }
    let mut sections = Vec::with_capacity(3);
    for (i, (_, end, canonical)) in spans.iter().enumerate() {
        let until = spans.get(i + 1).map(|(s, _, _)| *s).unwrap_or(output.len());
        let content = output[*end..until].trim();
        if content.is_empty() {
            return Err(Error::ParseFailure(canonical.to_string()));
        }
        sections.push(content.to_string());
    }
    let mut it = sections.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap(), it.next().unwrap()))
}

/// Parse a teacher response into an annotation. The analog answer is
/// filled from the analog solution when the grader can extract one.
pub fn parse_annotation(
    teacher_output: &str,
    problem_id: &str,
    teacher_model: &str,
    teacher_temperature: f64,
) -> Result<ReflectiveAnnotation> {
    let (strategy, analog_question, analog_solution) = split_annotation_sections(teacher_output)?;
    let analog_answer_raw = grader::extract_final_answer(&analog_solution).ok();
    Ok(ReflectiveAnnotation {
        problem_id: problem_id.to_string(),
        strategy,
        analog_question,
        analog_solution,
        analog_answer_raw,
        reflection: None,
        teacher_model: teacher_model.to_string(),
        teacher_temperature,
    })
}

/// Parse the augmented-solution section of a Table-style augmentation
/// response.
pub fn parse_augmented_solution(teacher_output: &str) -> Result<String> {
    let m = AUGMENT_HEADER_RE
        .find_iter(teacher_output)
        .last()
        .ok_or_else(|| Error::ParseFailure(HEADER_AUGMENTED_SOLUTION.to_string()))?;
    let content = teacher_output[m.end()..].trim();
    if content.is_empty() {
        return Err(Error::ParseFailure(HEADER_AUGMENTED_SOLUTION.to_string()));
    }
    Ok(content.to_string())
}

/// Render an annotation back into the canonical teacher-response shape.
/// `parse_annotation` on this text is the identity on (S, Q', C').
pub fn render_annotation_response(annotation: &ReflectiveAnnotation) -> String {
    format!(
        "{}\n{}\n\n{}\n{}\n\n{}\n{}",
        HEADER_STRATEGY,
        annotation.strategy,
        HEADER_SIMILAR_PROBLEM,
        annotation.analog_question,
        HEADER_SIMILAR_SOLUTION,
        annotation.analog_solution,
    )
}

/// One problem that exhausted its retries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationFailure {
    pub problem_id: String,
    pub attempts: u32,
    pub last_error: String,
}

#[derive(Debug, Default)]
pub struct AnnotateOutcome {
    /// One annotation per successfully annotated problem, in input order.
    pub annotations: Vec<ReflectiveAnnotation>,
    pub failures: Vec<AnnotationFailure>,
    pub warnings: Vec<String>,
    /// Requests actually issued (zero on a fully checkpointed rerun).
    pub requests_issued: usize,
}

fn load_checkpoint(path: &Path) -> Result<HashMap<String, ReflectiveAnnotation>> {
    let mut map = HashMap::new();
    if !path.exists() {
        return Ok(map);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: ReflectiveAnnotation = serde_json::from_str(&line)?;
        map.insert(ann.problem_id.clone(), ann);
    }
    Ok(map)
}

enum AttemptOutcome {
    Done(ReflectiveAnnotation),
    Failed(AnnotationFailure),
}

/// Annotate every problem, resuming from the checkpoint file. Completed
/// annotations are appended to the checkpoint as they arrive; output is
/// ordered by input order regardless of completion order.
pub fn annotate_corpus(
    problems: &[Problem],
    cfg: &TeacherConfig,
    checkpoint: &Path,
) -> Result<AnnotateOutcome> {
    let done = load_checkpoint(checkpoint)?;
    let pending: Vec<&Problem> = problems.iter().filter(|p| !done.contains_key(&p.id)).collect();

    let mut outcome = AnnotateOutcome::default();
    let mut fresh: HashMap<String, ReflectiveAnnotation> = HashMap::new();

    if !pending.is_empty() {
        let client = cfg.client()?;
        let ckpt_file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(checkpoint)
            .map_err(|e| Error::io(checkpoint, e))?;
        let writer = Mutex::new(BufWriter::new(ckpt_file));
        let requests = std::sync::atomic::AtomicUsize::new(0);

        let results = bounded_parallel_map(&pending, cfg.parallelism, |_, problem| {
            let prompt = render_annotation_prompt(problem);
            let mut attempts = 0u32;
            loop {
                attempts += 1;
                requests.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let result = client
                    .chat(
                        &cfg.model_name,
                        &prompt,
                        cfg.temperature,
                        cfg.max_output_tokens,
                        Vec::new(),
                    )
                    .and_then(|gen| {
                        parse_annotation(&gen.text, &problem.id, &cfg.model_name, cfg.temperature)
                    })
                    .and_then(|ann| {
                        if ann.analog_question == problem.question {
                            Err(Error::ParseFailure(
                                "analog question repeats the original question".into(),
                            ))
                        } else {
                            Ok(ann)
                        }
                    });
                match result {
                    Ok(ann) => {
                        let mut w = writer.lock().unwrap();
                        // Append-as-completed keeps the run resumable.
                        if let Ok(line) = serde_json::to_string(&ann) {
                            let _ = writeln!(w, "{line}");
                            let _ = w.flush();
                        }
                        return AttemptOutcome::Done(ann);
                    }
                    Err(e) if matches!(e, Error::Auth { .. }) => {
                        return AttemptOutcome::Failed(AnnotationFailure {
                            problem_id: problem.id.clone(),
                            attempts,
                            last_error: format!("fatal: {e}"),
                        });
                    }
                    Err(e) if attempts <= cfg.max_retries => {
                        let _ = e;
                    }
                    Err(e) => {
                        return AttemptOutcome::Failed(AnnotationFailure {
                            problem_id: problem.id.clone(),
                            attempts,
                            last_error: e.to_string(),
                        });
                    }
                }
            }
        });

        outcome.requests_issued = requests.load(std::sync::atomic::Ordering::SeqCst);
        for r in results {
            match r {
                AttemptOutcome::Done(ann) => {
                    fresh.insert(ann.problem_id.clone(), ann);
                }
                AttemptOutcome::Failed(f) => {
                    if f.last_error.starts_with("fatal:") {
                        return Err(Error::Other(f.last_error));
                    }
                    outcome.failures.push(f);
                }
            }
        }
    }

    for p in problems {
        if let Some(ann) = done.get(&p.id).or_else(|| fresh.get(&p.id)) {
            if ann.analog_answer_raw.is_none() {
                outcome
                    .warnings
                    .push(format!("{}: no extractable analog answer", p.id));
            }
            outcome.annotations.push(ann.clone());
        }
    }
    Ok(outcome)
}

/// One verified augmented solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentedSolution {
    pub problem_id: String,
    pub augmented_solution: String,
}

#[derive(Debug, Default)]
pub struct AugmentOutcome {
    pub augmented: Vec<AugmentedSolution>,
    pub failures: Vec<AnnotationFailure>,
}

/// Rewrite each gold solution through the augmentation prompt. A rewrite
/// must still grade correct against the problem's gold answer; otherwise
/// it is retried and then reported.
pub fn augment_solutions(problems: &[Problem], cfg: &TeacherConfig) -> Result<AugmentOutcome> {
    let client = cfg.client()?;
    let results = bounded_parallel_map(problems, cfg.parallelism, |_, problem| {
        let prompt = render_augment_prompt(problem);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let result = client
                .chat(
                    &cfg.model_name,
                    &prompt,
                    cfg.temperature,
                    cfg.max_output_tokens,
                    Vec::new(),
                )
                .and_then(|gen| parse_augmented_solution(&gen.text))
                .and_then(|aug| {
                    if grader::grade(&aug, &problem.gold_answer_raw) {
                        Ok(aug)
                    } else {
                        Err(Error::Other(
                            "augmented solution contradicts the gold answer".into(),
                        ))
                    }
                });
            match result {
                Ok(aug) => {
                    return Ok(AugmentedSolution {
                        problem_id: problem.id.clone(),
                        augmented_solution: aug,
                    })
                }
                Err(e) if matches!(e, Error::Auth { .. }) => {
                    return Err(AnnotationFailure {
                        problem_id: problem.id.clone(),
                        attempts,
                        last_error: format!("fatal: {e}"),
                    })
                }
                Err(e) if attempts <= cfg.max_retries => {
                    let _ = e;
                }
                Err(e) => {
                    return Err(AnnotationFailure {
                        problem_id: problem.id.clone(),
                        attempts,
                        last_error: e.to_string(),
                    })
                }
            }
        }
    });
    let mut outcome = AugmentOutcome::default();
    for r in results {
        match r {
            Ok(aug) => outcome.augmented.push(aug),
            Err(f) => {
                if f.last_error.starts_with("fatal:") {
                    return Err(Error::Other(f.last_error));
                }
                outcome.failures.push(f);
            }
        }
    }
    Ok(outcome)
}

/// Attach externally supplied reflection texts (JSONL of
/// `{problem_id, reflection}`) to annotations.
pub fn attach_reflections(
    annotations: &mut [ReflectiveAnnotation],
    reflections: &HashMap<String, String>,
) {
    for ann in annotations {
        if let Some(r) = reflections.get(&ann.problem_id) {
            ann.reflection = Some(r.clone());
        }
    }
}

/// Load a reflections JSONL file.
pub fn load_reflections(path: &Path) -> Result<HashMap<String, String>> {
    #[derive(Deserialize)]
    struct Row {
        problem_id: String,
        reflection: String,
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)?;
        map.insert(row.problem_id, row.reflection);
    }
    Ok(map)
}

/// Write annotations as JSONL (the checkpoint format).
pub fn write_annotations(annotations: &[ReflectiveAnnotation], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for a in annotations {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load annotations from JSONL.
pub fn load_annotations(path: &Path) -> Result<Vec<ReflectiveAnnotation>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const YOUNGSVILLE_EXAMPLE: &str = "### Original Problem:
Youngsville had a population of 684 people. The town had a growth spurt and the population increased by 25% then they witnessed that 40% of the population moved away. What is the current population?

### Solution to the Original Problem:
The town had 684 people, and then had a 25% growth spurt, so the population increased by 684 * 0.25 = 171 people. This increase brought the population to 684 + 171 = 855 people. 40% of the population moved away, so 855 * 0.40 = 342 people moved away. The new population is 855 - 342 = 513 people. The answer is 513.

### Type of Problem and Solution Method:
This is a consecutive percentage change problem. The solution method involves applying the growth factor first, then applying the reduction factor. The key to solve the problem is to understand the concept of relative increase and decrease percentages.

### Similar Problem:
A company started with 800 employees. After one year, the workforce increased by 20%, and then 30% of the new workforce decided to quit due to relocation. How many employees remain at the company?

### Solution to the Similar Problem:
1. Initial employees: 800.

2. Increase by 20%: 20% of 800 is 160, so the workforce grows to 800 + 160 = 960.

3. Then, 30% of these 960 employees quit: 30% of 960 is 288, so 288 employees leave.

4. Remaining employees: 960 - 288 = 672. Therefore, the final number of employees is 672.";

    #[test]
    fn parses_in_context_example_as_output() {
        let ann = parse_annotation(YOUNGSVILLE_EXAMPLE, "p0", "m", 0.7).unwrap();
        assert!(ann
            .strategy
            .starts_with("This is a consecutive percentage change problem"));
        assert!(ann.analog_question.starts_with("A company started with 800"));
        assert_eq!(ann.analog_answer_raw.as_deref(), Some("672"));
    }

    #[test]
    fn missing_header_names_it() {
        let out = "### Type of Problem and Solution Method:\nsomething\n\nNo similar problem here.";
        let err = parse_annotation(out, "p0", "m", 0.7).unwrap_err();
        match err {
            Error::ParseFailure(h) => assert_eq!(h, HEADER_SIMILAR_PROBLEM),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_section_is_failure() {
        let out = "### Type of Problem and Solution Method:\n\n### Similar Problem:\nQ\n\n### Solution to the Similar Problem:\nS";
        assert!(parse_annotation(out, "p0", "m", 0.7).is_err());
    }

    #[test]
    fn header_tolerance() {
        let out = "#### Type of Problem and Solution Method\nstrat\n\n## Similar Problem:  \nq\n\nSolution to the Similar Problem:\nsol with answer 42";
        let ann = parse_annotation(out, "p0", "m", 0.7).unwrap();
        assert_eq!(ann.strategy, "strat");
        assert_eq!(ann.analog_question, "q");
    }

    #[test]
    fn canonical_render_parses_back() {
        let ann = ReflectiveAnnotation {
            problem_id: "p1".into(),
            strategy: "S text".into(),
            analog_question: "Q' text".into(),
            analog_solution: "C' text ends with 7".into(),
            analog_answer_raw: None,
            reflection: None,
            teacher_model: "m".into(),
            teacher_temperature: 0.7,
        };
        let rendered = render_annotation_response(&ann);
        let back = parse_annotation(&rendered, "p1", "m", 0.7).unwrap();
        assert_eq!(back.strategy, ann.strategy);
        assert_eq!(back.analog_question, ann.analog_question);
        assert_eq!(back.analog_solution, ann.analog_solution);
    }

    #[test]
    fn augmented_solution_section() {
        let out = "preamble\n\n### Augmented Solution:\n1. Initial population: 684.\nTherefore, the final population is 513.";
        let aug = parse_augmented_solution(out).unwrap();
        assert!(aug.starts_with("1. Initial population: 684."));
    }
}
