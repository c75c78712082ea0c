//! Shared fixtures for the integration suites.

use std::collections::BTreeSet;

use metaladder::corpus::{Problem, Source, Split};
use metaladder::mockllm::{MockBehavior, MockProblem, MockServerConfig, TraceStyle};

/// Deterministic synthetic word problems with integer answers
/// `base + 3 * i`.
pub fn synth_problems(n: usize, split: Split) -> Vec<Problem> {
    (0..n)
        .map(|i| {
            let base = 10 + i as i64;
            let answer = base + 3;
            Problem {
                id: format!("synk-{split}-{i:05}"),
                source: Source::Custom,
                split,
                question: format!(
                    "A vendor sells {base} apples in the morning and 3 more in the afternoon. How many apples were sold on day {i}?"
                ),
                gold_solution: format!(
                    "Morning sales were {base}. Afternoon adds 3. {base} + 3 = {answer}. The answer is {answer}."
                ),
                gold_answer_raw: answer.to_string(),
                subject: None,
                level: None,
            }
        })
        .collect()
}

pub fn mock_problems(problems: &[Problem]) -> Vec<MockProblem> {
    problems
        .iter()
        .map(|p| MockProblem {
            id: p.id.clone(),
            question: p.question.clone(),
            gold_answer: p.gold_answer_raw.clone(),
        })
        .collect()
}

pub fn scripted_student_config(
    problems: &[Problem],
    correct_ids: impl IntoIterator<Item = String>,
    style: TraceStyle,
) -> MockServerConfig {
    MockServerConfig::new(MockBehavior::ScriptedStudent {
        student_correct_ids: correct_ids.into_iter().collect::<BTreeSet<_>>(),
        student_trace_style: style,
        problems: mock_problems(problems),
    })
}

pub fn teacher_config(seed: u64) -> MockServerConfig {
    MockServerConfig::new(MockBehavior::TemplateTeacher { teacher_seed: seed })
}

/// Ids of the even-indexed half of a problem list.
pub fn even_ids(problems: &[Problem]) -> Vec<String> {
    problems
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 2 == 0)
        .map(|(_, p)| p.id.clone())
        .collect()
}
