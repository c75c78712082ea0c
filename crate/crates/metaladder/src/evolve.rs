//! Self-evolution rounds: greedy full-mode inference over the training
//! problems, answer-verified filtering, and order-stable dataset merging
//! with exact-duplicate removal.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::composer::{self, CompositionFormat, TrainingSample};
use crate::corpus::Problem;
use crate::error::{Error, Result};
use crate::grader;
use crate::inference::{self, InferenceMode, StudentConfig};

/// Accounting for one round. The counts form a chain:
/// `added_after_dedupe <= correct <= parse_ok <= attempted`, and
/// `dataset_size_after == dataset_size_before + added_after_dedupe`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolveRoundReport {
    pub round: u32,
    pub attempted: usize,
    pub parse_ok: usize,
    pub correct: usize,
    pub added_after_dedupe: usize,
    pub dataset_size_before: usize,
    pub dataset_size_after: usize,
}

/// Order-stable concatenation with exact-duplicate removal on
/// `(origin_id, response)`.
pub fn merge_datasets(base: &[TrainingSample], additions: &[TrainingSample]) -> Vec<TrainingSample> {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut merged = Vec::with_capacity(base.len() + additions.len());
    for s in base.iter().chain(additions) {
        let key = (s.origin_id.clone(), s.response.clone());
        if seen.insert(key) {
            merged.push(s.clone());
        }
    }
    merged
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointRow {
    problem_id: String,
    trace: String,
}

fn load_round_checkpoint(path: &Path) -> Result<Vec<CheckpointRow>> {
    let mut rows = Vec::new();
    if !path.exists() {
        return Ok(rows);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line)?);
    }
    Ok(rows)
}

/// Run one self-evolution round. Every training problem gets one greedy
/// full-mode generation; a trace qualifies when its sections parse and its
/// final solution grades correct, and qualifying traces join the dataset
/// after deduplication. Per-problem traces append to `checkpoint` (when
/// given) so an interrupted round resumes without regenerating.
pub fn run_round(
    train_problems: &[Problem],
    dataset: &[TrainingSample],
    student: &StudentConfig,
    round: u32,
    checkpoint: Option<&Path>,
) -> Result<(Vec<TrainingSample>, EvolveRoundReport)> {
    assert!(round >= 1, "rounds are 1-based");

    let done: Vec<CheckpointRow> = match checkpoint {
        Some(p) => load_round_checkpoint(p)?,
        None => Vec::new(),
    };
    let done_ids: HashSet<&str> = done.iter().map(|r| r.problem_id.as_str()).collect();
    let pending: Vec<Problem> = train_problems
        .iter()
        .filter(|p| !done_ids.contains(p.id.as_str()))
        .cloned()
        .collect();

    let mut traces: Vec<(String, String)> = done
        .iter()
        .map(|r| (r.problem_id.clone(), r.trace.clone()))
        .collect();

    if !pending.is_empty() {
        let items = inference::infer_batch(&pending, student, InferenceMode::Full)?;
        let mut writer = match checkpoint {
            Some(p) => {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        for item in items {
            match item {
                inference::BatchItem::Done(r) => {
                    if let Some(w) = writer.as_mut() {
                        let row = CheckpointRow {
                            problem_id: r.problem_id.clone(),
                            trace: r.full_trace.clone(),
                        };
                        writeln!(w, "{}", serde_json::to_string(&row)?)
                            .map_err(|e| Error::io(checkpoint.unwrap(), e))?;
                        w.flush().map_err(|e| Error::io(checkpoint.unwrap(), e))?;
                    }
                    traces.push((r.problem_id, r.full_trace));
                }
                inference::BatchItem::Failed { problem_id, error } => {
                    return Err(Error::Other(format!(
                        "round {round} failed on {problem_id}: {error} (round is resumable from the checkpoint)"
                    )));
                }
            }
        }
    }

    // Re-key traces by problem order for deterministic accounting.
    let by_id: std::collections::HashMap<&str, &str> = traces
        .iter()
        .map(|(id, t)| (id.as_str(), t.as_str()))
        .collect();

    let attempted = train_problems.len();
    let mut parse_ok = 0usize;
    let mut correct = 0usize;
    let mut candidates: Vec<TrainingSample> = Vec::new();

    let parsed: Vec<Option<composer::ResponseSections>> = train_problems
        .iter()
        .map(|p| {
            by_id
                .get(p.id.as_str())
                .and_then(|t| composer::parse_response_sections(t).ok())
        })
        .collect();

    let grade_inputs: Vec<(String, String)> = train_problems
        .iter()
        .zip(&parsed)
        .filter_map(|(p, sec)| {
            sec.as_ref()
                .map(|s| (s.final_solution.clone(), p.gold_answer_raw.clone()))
        })
        .collect();
    let verdicts = grader::grade_batch(&grade_inputs);

    let mut verdict_iter = verdicts.iter();
    for (problem, sections) in train_problems.iter().zip(parsed) {
        let Some(sections) = sections else { continue };
        parse_ok += 1;
        let ok = *verdict_iter.next().expect("one verdict per parsed trace");
        if !ok {
            continue;
        }
        correct += 1;
        // Qualifying traces are stored in canonical section layout, which
        // keeps the render/parse invariant intact for the dataset file.
        let response = composer::render_response(&sections, CompositionFormat::Metaladder);
        candidates.push(TrainingSample {
            instruction: problem.question.clone(),
            response,
            format: CompositionFormat::Metaladder,
            origin_id: problem.id.clone(),
            evolve_round: round,
            response_sections: sections,
        });
    }

    let merged = merge_datasets(dataset, &candidates);
    let added_after_dedupe = merged.len() - dataset.len();
    let report = EvolveRoundReport {
        round,
        attempted,
        parse_ok,
        correct,
        added_after_dedupe,
        dataset_size_before: dataset.len(),
        dataset_size_after: merged.len(),
    };
    debug_assert!(report.added_after_dedupe <= report.correct);
    debug_assert!(report.correct <= report.parse_ok);
    debug_assert!(report.parse_ok <= report.attempted);
    Ok((merged, report))
}

/// The newly added samples of a merged round (those with this round's
/// `evolve_round`).
pub fn round_additions(merged: &[TrainingSample], round: u32) -> Vec<TrainingSample> {
    merged
        .iter()
        .filter(|s| s.evolve_round == round)
        .cloned()
        .collect()
}

/// Assert the training problems share no id with the test problems.
pub fn assert_no_contamination(train: &[Problem], test: &[Problem]) -> Result<()> {
    let test_ids: HashSet<&str> = test.iter().map(|p| p.id.as_str()).collect();
    let hits: Vec<&str> = train
        .iter()
        .map(|p| p.id.as_str())
        .filter(|id| test_ids.contains(id))
        .collect();
    if hits.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "train/test id intersection is non-empty: {hits:?}"
        )))
    }
}

/// Write the per-round artifacts: additions, report, and merged dataset.
pub fn write_round_artifacts(
    work_dir: &Path,
    round: u32,
    merged: &[TrainingSample],
    report: &EvolveRoundReport,
) -> Result<()> {
    std::fs::create_dir_all(work_dir).map_err(|e| Error::io(work_dir, e))?;
    let additions = round_additions(merged, round);
    composer::write_dataset(&additions, &work_dir.join(format!("round-{round}.additions.jsonl")))?;
    let report_path = work_dir.join(format!("round-{round}.report.json"));
    let f = File::create(&report_path).map_err(|e| Error::io(&report_path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n").map_err(|e| Error::io(&report_path, e))?;
    w.flush().map_err(|e| Error::io(&report_path, e))?;
    composer::write_dataset(merged, &work_dir.join(format!("dataset-round-{round}.jsonl")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(origin: &str, response: &str, round: u32) -> TrainingSample {
        TrainingSample {
            instruction: format!("q-{origin}"),
            response: response.to_string(),
            format: CompositionFormat::Metaladder,
            origin_id: origin.to_string(),
            evolve_round: round,
            response_sections: composer::ResponseSections {
                final_solution: response.to_string(),
                ..Default::default()
            },
        }
    }

    #[test]
    fn merge_identity_and_idempotence() {
        let d = vec![sample("a", "r1", 0), sample("b", "r2", 0)];
        assert_eq!(merge_datasets(&d, &[]), d);
        assert_eq!(merge_datasets(&d, &d), d);
    }

    #[test]
    fn merge_adds_unique_only() {
        let base = vec![sample("a", "r1", 0)];
        let additions = vec![
            sample("a", "r1", 1), // duplicate key despite different round
            sample("a", "r3", 1),
            sample("c", "r4", 1),
        ];
        let merged = merge_datasets(&base, &additions);
        assert_eq!(merged.len(), 3);
        assert_eq!(merged[0], base[0]);
    }

    #[test]
    fn merge_is_order_stable() {
        let base = vec![sample("a", "1", 0), sample("b", "2", 0)];
        let additions = vec![sample("c", "3", 1), sample("d", "4", 1)];
        let merged = merge_datasets(&base, &additions);
        let ids: Vec<&str> = merged.iter().map(|s| s.origin_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c", "d"]);
    }

    #[test]
    fn contamination_check() {
        use crate::corpus::{Source, Split};
        let mk = |id: &str, split: Split| Problem {
            id: id.into(),
            source: Source::Custom,
            split,
            question: "q".into(),
            gold_solution: "s".into(),
            gold_answer_raw: "1".into(),
            subject: None,
            level: None,
        };
        let train = vec![mk("a", Split::Train), mk("b", Split::Train)];
        let test = vec![mk("c", Split::Test)];
        assert!(assert_no_contamination(&train, &test).is_ok());
        let bad_test = vec![mk("b", Split::Test)];
        assert!(assert_no_contamination(&train, &bad_test).is_err());
    }
}
