//! Training-sample composition in every supported response grammar, plus
//! the inverse section parser used by shortcut inference, self-evolution,
//! and grading.
//!
//! The canonical section layout is part of the public format contract:
//! sections are separated by one blank line, and each marked section is
//! the marker on its own line followed by the section text. The marker
//! strings are fixed:
//!
//! ```text
//! Type of Problem and Solution Method:
//! Similar Problem:
//! Solution to the Similar Problem:
//! Original Problem:
//! Solution to the Original Problem:
//! Reflection:
//! ```
//!
//! A strategy section is normally the unmarked leading paragraph; the
//! explicit strategy marker appears only in the `post_metaladder` grammar,
//! where the strategy follows the final solution.

use serde::{Deserialize, Serialize};

use crate::annotator::ReflectiveAnnotation;
use crate::corpus::Problem;
use crate::error::{Error, Result};
use crate::prompts;

pub const MARKER_STRATEGY: &str = "Type of Problem and Solution Method:";
pub const MARKER_SIMILAR_PROBLEM: &str = "Similar Problem:";
pub const MARKER_SIMILAR_SOLUTION: &str = "Solution to the Similar Problem:";
pub const MARKER_ORIGINAL_PROBLEM: &str = "Original Problem:";
pub const MARKER_ORIGINAL_SOLUTION: &str = "Solution to the Original Problem:";
pub const MARKER_REFLECTION: &str = "Reflection:";

/// Response grammar tags. The sequence letters follow the glossary: Q
/// question, S strategy, Q'/C' analog problem/solution, C final solution,
/// R reflection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionFormat {
    /// QC: the plain instruction/solution pair.
    Cot,
    /// QSQ'C'QC: strategy, analog pair, restated problem, final solution.
    Metaladder,
    /// The metaladder sample plus the swapped sample (Q' as target).
    MetaladderReverse,
    /// Two independent samples, QC and Q'C'.
    AnalogyAug,
    /// QCR: solution first, reflection appended.
    RefaugStyle,
    /// QRC: reflection first, then the marked final solution.
    PreRefaug,
    /// QQCSQ'C': restated problem, final solution, then the reflective
    /// scaffold.
    PostMetaladder,
    /// QQ'C'QC: metaladder without the strategy paragraph.
    AblationNoStrategy,
    /// QSQC: strategy and restated problem, no analog pair.
    AblationNoAnalogy,
    /// QSQ'C'C: no problem restating before the final solution.
    AblationNoRestate,
}

impl CompositionFormat {
    pub const ALL: [CompositionFormat; 10] = [
        CompositionFormat::Cot,
        CompositionFormat::Metaladder,
        CompositionFormat::MetaladderReverse,
        CompositionFormat::AnalogyAug,
        CompositionFormat::RefaugStyle,
        CompositionFormat::PreRefaug,
        CompositionFormat::PostMetaladder,
        CompositionFormat::AblationNoStrategy,
        CompositionFormat::AblationNoAnalogy,
        CompositionFormat::AblationNoRestate,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            CompositionFormat::Cot => "cot",
            CompositionFormat::Metaladder => "metaladder",
            CompositionFormat::MetaladderReverse => "metaladder_reverse",
            CompositionFormat::AnalogyAug => "analogy_aug",
            CompositionFormat::RefaugStyle => "refaug_style",
            CompositionFormat::PreRefaug => "pre_refaug",
            CompositionFormat::PostMetaladder => "post_metaladder",
            CompositionFormat::AblationNoStrategy => "ablation_no_strategy",
            CompositionFormat::AblationNoAnalogy => "ablation_no_analogy",
            CompositionFormat::AblationNoRestate => "ablation_no_restate",
        }
    }

    /// Number of samples one (problem, annotation) pair yields.
    pub fn samples_per_problem(&self) -> usize {
        match self {
            CompositionFormat::AnalogyAug | CompositionFormat::MetaladderReverse => 2,
            _ => 1,
        }
    }
}

impl std::str::FromStr for CompositionFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CompositionFormat::ALL
            .iter()
            .copied()
            .find(|f| f.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown composition format {s:?}")))
    }
}

impl std::fmt::Display for CompositionFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.tag())
    }
}

/// The parsed response sections. `final_solution` is always present.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSections {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analog_question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analog_solution: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restated_question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<String>,
    pub final_solution: String,
}

/// One instruction/response training record with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub instruction: String,
    pub response: String,
    pub format: CompositionFormat,
    pub origin_id: String,
    pub evolve_round: u32,
    pub response_sections: ResponseSections,
}

enum Block<'a> {
    Leading(&'a str),
    Marked(&'static str, &'a str),
}

fn render_blocks(blocks: &[Block]) -> String {
    let mut out = String::new();
    for (i, block) in blocks.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        match block {
            Block::Leading(text) => out.push_str(text),
            Block::Marked(marker, text) => {
                out.push_str(marker);
                out.push('\n');
                out.push_str(text);
            }
        }
    }
    out
}

/// Rebuild the canonical response text from parsed sections. This is the
/// exact inverse of [`parse_response_sections`] for every grammar. The
/// `post_metaladder` grammar is the only one that cannot be inferred
/// from the sections alone, so the format is an argument.
pub fn render_response(sections: &ResponseSections, format: CompositionFormat) -> String {
    let mut blocks: Vec<Block> = Vec::new();
    if format == CompositionFormat::PostMetaladder {
        if let Some(q) = &sections.restated_question {
            blocks.push(Block::Marked(MARKER_ORIGINAL_PROBLEM, q));
        }
        blocks.push(Block::Marked(MARKER_ORIGINAL_SOLUTION, &sections.final_solution));
        if let Some(s) = &sections.strategy {
            blocks.push(Block::Marked(MARKER_STRATEGY, s));
        }
        if let Some(q) = &sections.analog_question {
            blocks.push(Block::Marked(MARKER_SIMILAR_PROBLEM, q));
        }
        if let Some(c) = &sections.analog_solution {
            blocks.push(Block::Marked(MARKER_SIMILAR_SOLUTION, c));
        }
        return render_blocks(&blocks);
    }
    if format == CompositionFormat::RefaugStyle {
        blocks.push(Block::Leading(&sections.final_solution));
        if let Some(r) = &sections.reflection {
            blocks.push(Block::Marked(MARKER_REFLECTION, r));
        }
        return render_blocks(&blocks);
    }
    if let Some(s) = &sections.strategy {
        blocks.push(Block::Leading(s));
    }
    if let Some(r) = &sections.reflection {
        blocks.push(Block::Marked(MARKER_REFLECTION, r));
    }
    if let Some(q) = &sections.analog_question {
        blocks.push(Block::Marked(MARKER_SIMILAR_PROBLEM, q));
    }
    if let Some(c) = &sections.analog_solution {
        blocks.push(Block::Marked(MARKER_SIMILAR_SOLUTION, c));
    }
    if let Some(q) = &sections.restated_question {
        blocks.push(Block::Marked(MARKER_ORIGINAL_PROBLEM, q));
    }
    if blocks.is_empty() {
        // Plain CoT: the whole response is the final solution.
        return sections.final_solution.clone();
    }
    blocks.push(Block::Marked(MARKER_ORIGINAL_SOLUTION, &sections.final_solution));
    render_blocks(&blocks)
}

fn require<'a>(
    value: &'a Option<String>,
    format: CompositionFormat,
    field: &str,
) -> Result<&'a String> {
    value.as_ref().ok_or_else(|| Error::Composition {
        format: format.tag().to_string(),
        field: field.to_string(),
    })
}

fn make_sample(
    instruction: &str,
    origin_id: &str,
    format: CompositionFormat,
    sections: ResponseSections,
) -> TrainingSample {
    TrainingSample {
        instruction: instruction.to_string(),
        response: render_response(&sections, format),
        format,
        origin_id: origin_id.to_string(),
        evolve_round: 0,
        response_sections: sections,
    }
}

/// Compose the training sample(s) for one problem in the given format.
/// Formats that use the reflective scaffold require an annotation;
/// `refaug_style` and `pre_refaug` additionally require the externally
/// supplied reflection text on the annotation.
pub fn compose(
    problem: &Problem,
    annotation: Option<&ReflectiveAnnotation>,
    format: CompositionFormat,
) -> Result<Vec<TrainingSample>> {
    let need_annotation = !matches!(format, CompositionFormat::Cot);
    let ann = if need_annotation {
        Some(annotation.ok_or_else(|| Error::Composition {
            format: format.tag().to_string(),
            field: "annotation".to_string(),
        })?)
    } else {
        None
    };

    let q = &problem.question;
    let c = &problem.gold_solution;

    let samples = match format {
        CompositionFormat::Cot => vec![make_sample(
            q,
            &problem.id,
            format,
            ResponseSections {
                final_solution: c.clone(),
                ..Default::default()
            },
        )],
        CompositionFormat::Metaladder => {
            let a = ann.unwrap();
            vec![make_sample(
                q,
                &problem.id,
                format,
                ResponseSections {
                    strategy: Some(a.strategy.clone()),
                    analog_question: Some(a.analog_question.clone()),
                    analog_solution: Some(a.analog_solution.clone()),
                    restated_question: Some(q.clone()),
                    final_solution: c.clone(),
                    ..Default::default()
                },
            )]
        }
        CompositionFormat::MetaladderReverse => {
            let a = ann.unwrap();
            let forward = make_sample(
                q,
                &problem.id,
                format,
                ResponseSections {
                    strategy: Some(a.strategy.clone()),
                    analog_question: Some(a.analog_question.clone()),
                    analog_solution: Some(a.analog_solution.clone()),
                    restated_question: Some(q.clone()),
                    final_solution: c.clone(),
                    ..Default::default()
                },
            );
            // Swapped: the analog problem becomes the target and the
            // original pair serves as the analog.
            let swapped = make_sample(
                &a.analog_question,
                &problem.id,
                format,
                ResponseSections {
                    strategy: Some(a.strategy.clone()),
                    analog_question: Some(q.clone()),
                    analog_solution: Some(c.clone()),
                    restated_question: Some(a.analog_question.clone()),
                    final_solution: a.analog_solution.clone(),
                    ..Default::default()
                },
            );
            vec![forward, swapped]
        }
        CompositionFormat::AnalogyAug => {
            let a = ann.unwrap();
            let original = make_sample(
                q,
                &problem.id,
                format,
                ResponseSections {
                    final_solution: c.clone(),
                    ..Default::default()
                },
            );
            let analog = make_sample(
                &a.analog_question,
                &problem.id,
                format,
                ResponseSections {
                    final_solution: a.analog_solution.clone(),
                    ..Default::default()
                },
            );
            vec![original, analog]
        }
        CompositionFormat::RefaugStyle => {
            let a = ann.unwrap();
            let r = require(&a.reflection, format, "reflection")?;
            vec![make_sample(
                q,
                &problem.id,
                format,
                ResponseSections {
                    reflection: Some(r.clone()),
                    final_solution: c.clone(),
                    ..Default::default()
                },
            )]
        }
        CompositionFormat::PreRefaug => {
            let a = ann.unwrap();
            let r = require(&a.reflection, format, "reflection")?;
            vec![make_sample(
                q,
                &problem.id,
                format,
                ResponseSections {
                    reflection: Some(r.clone()),
                    final_solution: c.clone(),
                    ..Default::default()
                },
            )]
        }
        CompositionFormat::PostMetaladder => {
            let a = ann.unwrap();
            vec![make_sample(
                q,
                &problem.id,
                format,
                ResponseSections {
                    strategy: Some(a.strategy.clone()),
                    analog_question: Some(a.analog_question.clone()),
                    analog_solution: Some(a.analog_solution.clone()),
                    restated_question: Some(q.clone()),
                    final_solution: c.clone(),
                    ..Default::default()
                },
            )]
        }
        CompositionFormat::AblationNoStrategy => {
            let a = ann.unwrap();
            vec![make_sample(
                q,
                &problem.id,
                format,
                ResponseSections {
                    analog_question: Some(a.analog_question.clone()),
                    analog_solution: Some(a.analog_solution.clone()),
                    restated_question: Some(q.clone()),
                    final_solution: c.clone(),
                    ..Default::default()
                },
            )]
        }
        CompositionFormat::AblationNoAnalogy => {
            let a = ann.unwrap();
            vec![make_sample(
                q,
                &problem.id,
                format,
                ResponseSections {
                    strategy: Some(a.strategy.clone()),
                    restated_question: Some(q.clone()),
                    final_solution: c.clone(),
                    ..Default::default()
                },
            )]
        }
        CompositionFormat::AblationNoRestate => {
            let a = ann.unwrap();
            vec![make_sample(
                q,
                &problem.id,
                format,
                ResponseSections {
                    strategy: Some(a.strategy.clone()),
                    analog_question: Some(a.analog_question.clone()),
                    analog_solution: Some(a.analog_solution.clone()),
                    final_solution: c.clone(),
                    ..Default::default()
                },
            )]
        }
    };
    Ok(samples)
}

// --- inverse parsing ------------------------------------------------------

const ALL_MARKERS: [&str; 6] = [
    MARKER_STRATEGY,
    MARKER_SIMILAR_PROBLEM,
    MARKER_SIMILAR_SOLUTION,
    MARKER_ORIGINAL_PROBLEM,
    MARKER_ORIGINAL_SOLUTION,
    MARKER_REFLECTION,
];

/// Find every canonical marker occurrence at a section boundary: either at
/// the start of the response or right after a blank line, with the marker
/// on its own line. Returns (byte offset of the boundary, marker).
fn find_marker_boundaries(response: &str) -> Vec<(usize, &'static str)> {
    let mut hits: Vec<(usize, &'static str)> = Vec::new();
    for marker in ALL_MARKERS {
        // "Original Problem:" is a suffix of "Solution to the Original
        // Problem:" (likewise the similar-problem pair); the boundary
        // anchoring below is what keeps the shorter marker from matching
        // inside the longer one.
        let mut from = 0;
        while let Some(pos) = response[from..].find(marker) {
            let at = from + pos;
            let on_own_line = response[at + marker.len()..]
                .chars()
                .next()
                .is_none_or(|c| c == '\n');
            let at_boundary = at == 0 || response[..at].ends_with("\n\n");
            if on_own_line && at_boundary {
                hits.push((at, marker));
            }
            from = at + marker.len();
        }
    }
    hits.sort_by_key(|(at, _)| *at);
    hits
}

fn section_content<'a>(response: &'a str, start: usize, next_boundary: Option<usize>) -> &'a str {
    let raw = match next_boundary {
        Some(end) => &response[start..end],
        None => &response[start..],
    };
    // Drop the blank-line separator that belongs to the next section.
    raw.strip_suffix("\n\n").unwrap_or(raw)
}

/// Split a response on the canonical markers and map the marker sequence
/// onto named sections. Marker sequences outside the known grammars are
/// an error; text with no markers at all is a plain final solution.
pub fn parse_response_sections(response: &str) -> Result<ResponseSections> {
    let boundaries = find_marker_boundaries(response);

    if boundaries.is_empty() {
        return Ok(ResponseSections {
            final_solution: response.to_string(),
            ..Default::default()
        });
    }

    let leading = if boundaries[0].0 > 0 {
        Some(section_content(response, 0, Some(boundaries[0].0)).to_string())
    } else {
        None
    };

    let mut parts: Vec<(&'static str, String)> = Vec::new();
    for (i, (at, marker)) in boundaries.iter().enumerate() {
        let content_start = at + marker.len() + 1; // marker line + '\n'
        let content_start = content_start.min(response.len());
        let next = boundaries.get(i + 1).map(|(b, _)| *b);
        parts.push((
            marker,
            section_content(response, content_start, next).to_string(),
        ));
    }

    let sequence: Vec<&'static str> = parts.iter().map(|(m, _)| *m).collect();
    let mut take = |marker: &str| -> Option<String> {
        parts
            .iter()
            .position(|(m, _)| *m == marker)
            .map(|i| parts.remove(i).1)
    };

    let seq_err = || Error::SectionOrder(sequence.join(" -> "));

    // Grammars keyed by their marker sequence.
    match sequence.as_slice() {
        // QSQ'C'QC and its no-strategy ablation.
        [MARKER_SIMILAR_PROBLEM, MARKER_SIMILAR_SOLUTION, MARKER_ORIGINAL_PROBLEM, MARKER_ORIGINAL_SOLUTION] =>
        {
            let analog_question = take(MARKER_SIMILAR_PROBLEM);
            let analog_solution = take(MARKER_SIMILAR_SOLUTION);
            let restated_question = take(MARKER_ORIGINAL_PROBLEM);
            let final_solution = take(MARKER_ORIGINAL_SOLUTION).ok_or_else(seq_err)?;
            Ok(ResponseSections {
                strategy: leading,
                analog_question,
                analog_solution,
                restated_question,
                reflection: None,
                final_solution,
            })
        }
        // QSQC (no analog pair); also the shortcut-inference trace shape.
        [MARKER_ORIGINAL_PROBLEM, MARKER_ORIGINAL_SOLUTION] => Ok(ResponseSections {
            strategy: leading,
            restated_question: take(MARKER_ORIGINAL_PROBLEM),
            final_solution: take(MARKER_ORIGINAL_SOLUTION).ok_or_else(seq_err)?,
            ..Default::default()
        }),
        // QSQ'C'C (no restating).
        [MARKER_SIMILAR_PROBLEM, MARKER_SIMILAR_SOLUTION, MARKER_ORIGINAL_SOLUTION] => {
            Ok(ResponseSections {
                strategy: leading,
                analog_question: take(MARKER_SIMILAR_PROBLEM),
                analog_solution: take(MARKER_SIMILAR_SOLUTION),
                final_solution: take(MARKER_ORIGINAL_SOLUTION).ok_or_else(seq_err)?,
                ..Default::default()
            })
        }
        // QCR: solution first, reflection appended.
        [MARKER_REFLECTION] => {
            let final_solution = leading.ok_or_else(seq_err)?;
            Ok(ResponseSections {
                reflection: take(MARKER_REFLECTION),
                final_solution,
                ..Default::default()
            })
        }
        // QRC: reflection first, marked final solution.
        [MARKER_REFLECTION, MARKER_ORIGINAL_SOLUTION] if leading.is_none() => {
            Ok(ResponseSections {
                reflection: take(MARKER_REFLECTION),
                final_solution: take(MARKER_ORIGINAL_SOLUTION).ok_or_else(seq_err)?,
                ..Default::default()
            })
        }
        // QQCSQ'C': the post-hoc scaffold; strategy carries its marker.
        [MARKER_ORIGINAL_PROBLEM, MARKER_ORIGINAL_SOLUTION, MARKER_STRATEGY, MARKER_SIMILAR_PROBLEM, MARKER_SIMILAR_SOLUTION]
            if leading.is_none() =>
        {
            Ok(ResponseSections {
                restated_question: take(MARKER_ORIGINAL_PROBLEM),
                final_solution: take(MARKER_ORIGINAL_SOLUTION).ok_or_else(seq_err)?,
                strategy: take(MARKER_STRATEGY),
                analog_question: take(MARKER_SIMILAR_PROBLEM),
                analog_solution: take(MARKER_SIMILAR_SOLUTION),
                reflection: None,
            })
        }
        _ => Err(seq_err()),
    }
}

// --- JSONL records ---------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordMeta {
    pub format: CompositionFormat,
    pub origin_id: String,
    pub evolve_round: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub instruction_text: String,
    pub response_text: String,
    pub meta: RecordMeta,
}

/// Serialize one sample as a JSONL line. The instruction text is the
/// instruction wrapper with the question filled in.
pub fn render_training_record(sample: &TrainingSample) -> Result<String> {
    let record = TrainingRecord {
        instruction_text: prompts::render_instruction(&sample.instruction),
        response_text: sample.response.clone(),
        meta: RecordMeta {
            format: sample.format,
            origin_id: sample.origin_id.clone(),
            evolve_round: sample.evolve_round,
        },
    };
    Ok(serde_json::to_string(&record)?)
}

/// Inverse of [`render_training_record`].
pub fn parse_training_record(line: &str) -> Result<TrainingSample> {
    let record: TrainingRecord = serde_json::from_str(line)?;
    let instruction = unwrap_instruction(&record.instruction_text)?;
    let response_sections = parse_response_sections(&record.response_text)?;
    Ok(TrainingSample {
        instruction,
        response: record.response_text,
        format: record.meta.format,
        origin_id: record.meta.origin_id,
        evolve_round: record.meta.evolve_round,
        response_sections,
    })
}

/// Strip the instruction wrapper back off to recover the raw question.
pub fn unwrap_instruction(instruction_text: &str) -> Result<String> {
    let (head, tail) = prompts::TRAIN_PROMPT_TEMPLATE
        .split_once("{question}")
        .expect("template has question slot");
    instruction_text
        .strip_prefix(head)
        .and_then(|rest| rest.strip_suffix(tail))
        .map(|q| q.to_string())
        .ok_or_else(|| Error::Other("instruction text does not match the wrapper".into()))
}

/// Write samples to a JSONL dataset file.
pub fn write_dataset(samples: &[TrainingSample], path: &std::path::Path) -> Result<()> {
    use std::io::Write as _;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        let line = render_training_record(s)?;
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load a JSONL dataset file.
pub fn load_dataset(path: &std::path::Path) -> Result<Vec<TrainingSample>> {
    use std::io::BufRead as _;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut samples = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(parse_training_record(&line)?);
    }
    Ok(samples)
}
