//! Problem corpus ingestion: GSM8K-style, MATH-style, and generic JSONL
//! records into the canonical [`Problem`] type, with per-record rejects
//! instead of silent drops.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grader;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Gsm8k,
    Math,
    Custom,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Gsm8k => write!(f, "gsm8k"),
            Source::Math => write!(f, "math"),
            Source::Custom => write!(f, "custom"),
        }
    }
}

impl std::str::FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gsm8k" => Ok(Source::Gsm8k),
            "math" => Ok(Source::Math),
            "custom" | "custom-jsonl" => Ok(Source::Custom),
            other => Err(Error::Config(format!("unknown source format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One source task: a question, its gold solution, and the extracted gold
/// final answer. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub source: Source,
    pub split: Split,
    pub question: String,
    pub gold_solution: String,
    pub gold_answer_raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
}

/// A record that failed ingestion, with enough context to audit it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
    pub raw: String,
}

/// Result of one ingest run. `problems.len() + rejects.len()` equals the
/// number of input lines.
#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub problems: Vec<Problem>,
    pub rejects: Vec<Reject>,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct Gsm8kRecord {
    question: String,
    answer: String,
}

#[derive(Deserialize)]
struct MathRecord {
    problem: String,
    solution: String,
    #[serde(default)]
    subject: Option<String>,
    #[serde(default)]
    level: Option<String>,
}

#[derive(Deserialize)]
struct CustomRecord {
    #[serde(default)]
    id: Option<String>,
    question: String,
    solution: String,
    #[serde(default)]
    answer: Option<String>,
}

/// Extract the gold final answer with source-specific priority: GSM8K
/// takes the `#### ` tail first, MATH the last `\boxed{...}`, and custom
/// goes straight to the grader's default cascade. A multi-boxed MATH
/// solution takes the last span and reports a warning.
pub fn extract_gold_answer(solution: &str, source: Source) -> Result<(String, Option<String>)> {
    if solution.trim().is_empty() {
        return Err(Error::Extraction {
            record: String::new(),
            reason: "empty solution".into(),
        });
    }
    match source {
        Source::Gsm8k => {
            if let Some(tail) = grader::extract_hash_tail(solution) {
                return Ok((tail, None));
            }
        }
        Source::Math => {
            if let Some((answer, count)) = grader::extract_last_boxed(solution) {
                let warning = (count > 1)
                    .then(|| format!("multiple \\boxed spans ({count}), using the last"));
                return Ok((answer, warning));
            }
        }
        Source::Custom => {}
    }
    match grader::extract_final_answer(solution) {
        Ok(answer) => Ok((answer, None)),
        Err(_) => Err(Error::Extraction {
            record: String::new(),
            reason: "no final-answer pattern matched".into(),
        }),
    }
}

fn build_problem(
    raw: &str,
    line_idx: usize,
    source: Source,
    split: Split,
) -> std::result::Result<(Problem, Option<String>), String> {
    let assigned_id = format!("{source}-{split}-{line_idx:05}");
    let (id, question, solution, answer, subject, level) = match source {
        Source::Gsm8k => {
            let rec: Gsm8kRecord = serde_json::from_str(raw).map_err(|e| e.to_string())?;
            (assigned_id, rec.question, rec.answer, None, None, None)
        }
        Source::Math => {
            let rec: MathRecord = serde_json::from_str(raw).map_err(|e| e.to_string())?;
            (
                assigned_id,
                rec.problem,
                rec.solution,
                None,
                rec.subject,
                rec.level,
            )
        }
        Source::Custom => {
            let rec: CustomRecord = serde_json::from_str(raw).map_err(|e| e.to_string())?;
            (
                rec.id.unwrap_or(assigned_id),
                rec.question,
                rec.solution,
                rec.answer,
                None,
                None,
            )
        }
    };
    if question.trim().is_empty() {
        return Err("empty question".into());
    }
    if solution.trim().is_empty() {
        return Err("empty solution".into());
    }
    let (gold_answer_raw, warning) = match answer {
        Some(a) if !a.trim().is_empty() => (a, None),
        _ => extract_gold_answer(&solution, source).map_err(|e| e.to_string())?,
    };
    let warning = warning.map(|w| format!("{id}: {w}"));
    Ok((
        Problem {
            id,
            source,
            split,
            question,
            gold_solution: solution,
            gold_answer_raw,
            subject,
            level,
        },
        warning,
    ))
}

/// Ingest a line-delimited file in the declared format. Malformed records
/// become rejects with their line number; only an unreadable file is
/// fatal. Duplicate ids within the file are rejected to keep ids unique.
pub fn ingest(path: &Path, source: Source, split: Split) -> Result<IngestOutcome> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut outcome = IngestOutcome::default();
    let mut seen_ids = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            outcome.rejects.push(Reject {
                line: idx + 1,
                reason: "empty line".into(),
                raw: line,
            });
            continue;
        }
        match build_problem(&line, idx, source, split) {
            Ok((problem, warning)) => {
                if !seen_ids.insert(problem.id.clone()) {
                    outcome.rejects.push(Reject {
                        line: idx + 1,
                        reason: format!("duplicate id {:?}", problem.id),
                        raw: line,
                    });
                    continue;
                }
                if let Some(w) = warning {
                    outcome.warnings.push(w);
                }
                outcome.problems.push(problem);
            }
            Err(reason) => outcome.rejects.push(Reject {
                line: idx + 1,
                reason,
                raw: line,
            }),
        }
    }
    Ok(outcome)
}

/// Load a canonical corpus JSONL file (the output schema of [`export`]).
pub fn load_canonical(path: &Path) -> Result<Vec<Problem>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut problems = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Problem = serde_json::from_str(&line).map_err(|e| Error::Extraction {
            record: format!("{}:{}", path.display(), idx + 1),
            reason: e.to_string(),
        })?;
        problems.push(p);
    }
    Ok(problems)
}

/// Write problems as canonical corpus JSONL.
pub fn export(problems: &[Problem], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in problems {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write the rejects sidecar next to the input file.
pub fn write_rejects(input: &Path, rejects: &[Reject]) -> Result<std::path::PathBuf> {
    let mut name = input.file_name().unwrap_or_default().to_os_string();
    name.push(".rejects.jsonl");
    let path = input.with_file_name(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for r in rejects {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
