//! Benchmark evaluation (Pass@1 accuracy and wall time) and table-style
//! report emission. Percentages are computed in exact rational arithmetic
//! and displayed to one decimal, rounding half away from zero, so report
//! bytes are deterministic.

use std::path::Path;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::corpus::Problem;
use crate::error::{Error, Result};
use crate::grader;
use crate::inference::{self, InferenceMode, StudentConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerProblem {
    pub id: String,
    pub correct: bool,
    pub generated_token_count: u64,
    pub wall_time_ms: u64,
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub benchmark_name: String,
    pub mode: InferenceMode,
    pub n_problems: usize,
    pub n_correct: usize,
    /// Exact fraction `n_correct / n_problems` as f64; displayed values
    /// are recomputed from the integer counts.
    pub accuracy: f64,
    pub total_wall_time_ms: u64,
    pub per_problem: Vec<PerProblem>,
}

impl BenchmarkReport {
    /// One-decimal percent string recomputed from the exact counts.
    pub fn percent_display(&self) -> String {
        percent_one_decimal(self.n_correct as u64, self.n_problems as u64)
    }
}

/// Format `100 * num / den` to one decimal, rounding half away from zero,
/// entirely in integer arithmetic.
pub fn percent_one_decimal(num: u64, den: u64) -> String {
    if den == 0 {
        return "0.0".to_string();
    }
    let value = BigRational::new(BigInt::from(num) * 1000, BigInt::from(den));
    format_one_decimal(&value)
}

/// Render `value` (given in tenths of a percent) as a one-decimal percent.
fn format_one_decimal(tenths: &BigRational) -> String {
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let rounded = if tenths.is_negative() {
        (tenths.clone() - half).ceil()
    } else {
        (tenths.clone() + half).floor()
    };
    let int = rounded.to_integer();
    let ten = BigInt::from(10);
    let whole = &int / &ten;
    let frac = (&int % &ten).abs();
    let sign = if int.is_negative() && whole.is_zero() { "-" } else { "" };
    format!("{sign}{whole}.{frac}")
}

/// Mean of per-benchmark percents (each `100 * c/n`), to one decimal.
pub fn average_percent_display(counts: &[(u64, u64)]) -> String {
    if counts.is_empty() {
        return "0.0".to_string();
    }
    let mut sum = BigRational::zero();
    for (c, n) in counts {
        if *n == 0 {
            continue;
        }
        sum += BigRational::new(BigInt::from(*c) * 1000, BigInt::from(*n));
    }
    let mean = sum / BigRational::from_integer(BigInt::from(counts.len() as u64));
    format_one_decimal(&mean)
}

/// Run one inference per problem in the given mode and grade each final
/// solution against the gold answer. Transport failures after retries
/// count incorrect and are flagged per problem.
pub fn evaluate(
    problems: &[Problem],
    student: &StudentConfig,
    mode: InferenceMode,
    benchmark_name: &str,
) -> Result<BenchmarkReport> {
    if problems.is_empty() {
        return Err(Error::Config("cannot evaluate an empty benchmark".into()));
    }
    let items = inference::infer_batch(problems, student, mode)?;
    let mut results = Vec::with_capacity(problems.len());
    for (problem, item) in problems.iter().zip(items) {
        match item {
            inference::BatchItem::Done(r) => results.push((problem, Some(r))),
            inference::BatchItem::Failed { .. } => results.push((problem, None)),
        }
    }

    // Correctness is judged on the final-solution section of each trace.
    let grade_inputs: Vec<(String, String)> = results
        .iter()
        .filter_map(|(p, r)| r.as_ref().map(|r| (r, p)))
        .map(|(r, p)| {
            let final_solution = crate::composer::parse_response_sections(&r.full_trace)
                .map(|s| s.final_solution)
                .unwrap_or_default();
            (final_solution, p.gold_answer_raw.clone())
        })
        .collect();
    let verdicts = grader::grade_batch(&grade_inputs);
    let mut verdict_iter = verdicts.iter();

    let mut per_problem = Vec::with_capacity(problems.len());
    let mut n_correct = 0usize;
    let mut total_wall_time_ms = 0u64;
    for (problem, result) in results {
        match result {
            Some(r) => {
                let correct = *verdict_iter.next().expect("one verdict per result");
                if correct {
                    n_correct += 1;
                }
                total_wall_time_ms += r.wall_time_ms;
                per_problem.push(PerProblem {
                    id: problem.id.clone(),
                    correct,
                    generated_token_count: r.generated_token_count,
                    wall_time_ms: r.wall_time_ms,
                    failed: false,
                });
            }
            None => per_problem.push(PerProblem {
                id: problem.id.clone(),
                correct: false,
                generated_token_count: 0,
                wall_time_ms: 0,
                failed: true,
            }),
        }
    }

    Ok(BenchmarkReport {
        benchmark_name: benchmark_name.to_string(),
        mode,
        n_problems: problems.len(),
        n_correct,
        accuracy: n_correct as f64 / problems.len() as f64,
        total_wall_time_ms,
        per_problem,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportLayout {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportLayout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(ReportLayout::Markdown),
            "csv" => Ok(ReportLayout::Csv),
            other => Err(Error::Config(format!("unknown report layout {other:?}"))),
        }
    }
}

/// Render reports as a method-rows-by-benchmark-columns table with an
/// unweighted Average column. Rows are keyed by inference mode; columns
/// appear in first-seen order.
pub fn render_report_table(reports: &[BenchmarkReport], layout: ReportLayout) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to render".into()));
    }
    let mut benchmarks: Vec<&str> = Vec::new();
    for r in reports {
        if !benchmarks.contains(&r.benchmark_name.as_str()) {
            benchmarks.push(&r.benchmark_name);
        }
    }
    let mut rows: Vec<String> = Vec::new();
    for r in reports {
        let label = r.mode.to_string();
        if !rows.contains(&label) {
            rows.push(label);
        }
    }

    let cell = |row: &str, bench: &str| -> Option<(u64, u64)> {
        reports
            .iter()
            .find(|r| r.mode.to_string() == row && r.benchmark_name == bench)
            .map(|r| (r.n_correct as u64, r.n_problems as u64))
    };

    let mut out = String::new();
    match layout {
        ReportLayout::Markdown => {
            out.push_str("| Method |");
            for b in &benchmarks {
                out.push_str(&format!(" {b} |"));
            }
            out.push_str(" Average |\n|---|");
            for _ in &benchmarks {
                out.push_str("---|");
            }
            out.push_str("---|\n");
            for row in &rows {
                out.push_str(&format!("| {row} |"));
                let mut counts = Vec::new();
                for b in &benchmarks {
                    match cell(row, b) {
                        Some((c, n)) => {
                            counts.push((c, n));
                            out.push_str(&format!(" {} |", percent_one_decimal(c, n)));
                        }
                        None => out.push_str(" - |"),
                    }
                }
                out.push_str(&format!(" {} |\n", average_percent_display(&counts)));
            }
        }
        ReportLayout::Csv => {
            out.push_str("method");
            for b in &benchmarks {
                out.push_str(&format!(",{b}"));
            }
            out.push_str(",average\n");
            for row in &rows {
                out.push_str(row);
                let mut counts = Vec::new();
                for b in &benchmarks {
                    match cell(row, b) {
                        Some((c, n)) => {
                            counts.push((c, n));
                            out.push_str(&format!(",{}", percent_one_decimal(c, n)));
                        }
                        None => out.push(','),
                    }
                }
                out.push_str(&format!(",{}\n", average_percent_display(&counts)));
            }
        }
    }
    Ok(out)
}

/// Write the table to `out`.
pub fn emit_report(reports: &[BenchmarkReport], out: &Path, layout: ReportLayout) -> Result<()> {
    let table = render_report_table(reports, layout)?;
    std::fs::write(out, table).map_err(|e| Error::io(out, e))?;
    Ok(())
}

/// Write the full report (with wall times and per-problem rows) as JSON.
pub fn write_report_json(report: &BenchmarkReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_report_json(path: &Path) -> Result<BenchmarkReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
