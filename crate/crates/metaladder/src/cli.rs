//! Command-line entry point wiring the pipeline stages into subcommands.
//!
//! Exit codes: 0 success, 1 per-record failures present (with a report
//! written), 2 fatal error or bad usage. Every run writes a
//! `manifest.json` (argv, resolved config, input digests, version) into
//! the work dir.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::annotator::{self, TeacherConfig};
use crate::composer::{self, CompositionFormat};
use crate::config::{PipelineConfig, RunManifest};
use crate::corpus::{self, Source, Split};
use crate::error::{Error, Result};
use crate::evaluation::{self, ReportLayout};
use crate::evolve;
use crate::grader;
use crate::inference::{self, InferenceMode, StudentConfig};
use crate::mockllm::{self, MockServerConfig};
use crate::similarity;

#[derive(Parser)]
#[command(
    name = "metaladder",
    version,
    about = "Analogical-reasoning training data toolchain"
)]
struct Cli {
    /// Pipeline configuration file (TOML, ${VAR} env interpolation).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for manifests, checkpoints, and round artifacts.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct TeacherArgs {
    /// Teacher endpoint base URL (overrides the config file).
    #[arg(long)]
    endpoint: Option<String>,
    /// Teacher model name.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_output_tokens: Option<u32>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    rpm_cap: Option<u32>,
}

#[derive(Args, Clone, Default)]
struct StudentArgs {
    /// Student endpoint base URL (overrides the config file).
    #[arg(long)]
    endpoint: Option<String>,
    /// Student model name.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_output_tokens: Option<u32>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a raw problem file into the canonical corpus schema.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Input schema: gsm8k, math, or custom.
        #[arg(long)]
        format: String,
        /// Declared split: train or test.
        #[arg(long)]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Annotate a corpus with reflective triples via the teacher endpoint.
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint file (default: <out>.ckpt.jsonl).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        teacher: TeacherArgs,
    },
    /// Rewrite gold solutions through the answer-augmentation prompt.
    Augment {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        teacher: TeacherArgs,
    },
    /// Compose a training dataset in one format.
    Compose {
        #[arg(long)]
        format: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// External reflections JSONL ({problem_id, reflection}) for the
        /// refaug-style formats.
        #[arg(long)]
        reflections: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run student inference over a corpus.
    Infer {
        #[arg(long)]
        corpus: PathBuf,
        /// full or shortcut.
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        student: StudentArgs,
    },
    /// Run self-evolution rounds and write round artifacts.
    Evolve {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        rounds: u32,
        /// Test corpus for the contamination check.
        #[arg(long)]
        test_corpus: Option<PathBuf>,
        #[command(flatten)]
        student: StudentArgs,
    },
    /// Evaluate Pass@1 accuracy on a benchmark corpus.
    Eval {
        #[arg(long)]
        benchmark: PathBuf,
        /// full or shortcut.
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        /// markdown or csv.
        #[arg(long, default_value = "markdown")]
        layout: String,
        /// Benchmark display name (default: input file stem).
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        student: StudentArgs,
    },
    /// Compute cosine / Jaccard-distance / Levenshtein for text pairs.
    Similarity {
        #[arg(long)]
        left: Option<String>,
        #[arg(long)]
        right: Option<String>,
        /// JSONL file of {a, b} pairs.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grade prediction traces against gold answers.
    Grade {
        /// Canonical corpus JSONL with gold answers.
        #[arg(long)]
        gold: PathBuf,
        /// JSONL with {id|problem_id, trace|full_trace|response_text}.
        #[arg(long)]
        pred: PathBuf,
        /// Verdicts output (default: <pred>.verdicts.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge benchmark report JSON files into one table.
    Report {
        #[arg(long, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "markdown")]
        layout: String,
    },
    /// Serve the deterministic mock endpoint.
    MockServe {
        #[arg(long, default_value_t = 0)]
        port: u16,
        /// Mock behavior/server config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        delay_ms: Option<u64>,
        #[arg(long)]
        delay_ms_per_token: Option<u64>,
    },
}

/// Run the CLI; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/version output on stdout with
            // success status; usage errors go to stderr with exit 2.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_pipeline_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_file(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn resolve_teacher(args: &TeacherArgs, cfg: &PipelineConfig) -> Result<TeacherConfig> {
    let mut teacher = match (&args.endpoint, &cfg.teacher) {
        (Some(url), Some(base)) => {
            let mut t = base.clone();
            t.endpoint_url = url.clone();
            t
        }
        (Some(url), None) => TeacherConfig::new(url, args.model.as_deref().unwrap_or("teacher")),
        (None, Some(base)) => base.clone(),
        (None, None) => {
            return Err(Error::Config(
                "no teacher endpoint: pass --endpoint or provide [teacher] in the config file"
                    .into(),
            ))
        }
    };
    if let Some(m) = &args.model {
        teacher.model_name = m.clone();
    }
    if let Some(t) = args.temperature {
        teacher.temperature = t;
    }
    if let Some(m) = args.max_output_tokens {
        teacher.max_output_tokens = m;
    }
    if let Some(r) = args.max_retries {
        teacher.max_retries = r;
    }
    if let Some(p) = args.parallelism {
        teacher.parallelism = p;
    }
    if let Some(c) = args.rpm_cap {
        teacher.requests_per_minute_cap = Some(c);
    }
    Ok(teacher)
}

fn resolve_student(args: &StudentArgs, cfg: &PipelineConfig) -> Result<StudentConfig> {
    let mut student = match (&args.endpoint, &cfg.student) {
        (Some(url), Some(base)) => {
            let mut s = base.clone();
            s.endpoint_url = url.clone();
            s
        }
        (Some(url), None) => StudentConfig::new(url, args.model.as_deref().unwrap_or("student")),
        (None, Some(base)) => base.clone(),
        (None, None) => {
            return Err(Error::Config(
                "no student endpoint: pass --endpoint or provide [student] in the config file"
                    .into(),
            ))
        }
    };
    if let Some(m) = &args.model {
        student.model_name = m.clone();
    }
    if let Some(m) = args.max_output_tokens {
        student.max_output_tokens = m;
    }
    if let Some(r) = args.max_retries {
        student.max_retries = r;
    }
    if let Some(p) = args.parallelism {
        student.parallelism = p;
    }
    Ok(student)
}

fn write_jsonl<T: serde::Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct RunContext {
    work_dir: PathBuf,
    manifest: RunManifest,
}

impl RunContext {
    fn new(cli_work_dir: Option<&Path>, cfg: &PipelineConfig) -> Self {
        let work_dir = cli_work_dir
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| cfg.paths.work_dir.clone());
        let manifest = RunManifest::new(std::env::args().collect());
        Self { work_dir, manifest }
    }

    fn finish(mut self, cfg: &PipelineConfig, inputs: &[&Path]) -> Result<()> {
        for p in inputs {
            if p.exists() {
                self.manifest.digest_input(p)?;
            }
        }
        self.manifest.set_config(cfg)?;
        self.manifest.write(&self.work_dir)?;
        Ok(())
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let cfg = load_pipeline_config(cli.config.as_deref())?;
    let ctx = RunContext::new(cli.work_dir.as_deref(), &cfg);

    match cli.command {
        Command::Ingest {
            input,
            format,
            split,
            out,
        } => {
            let source: Source = format.parse()?;
            let split: Split = split.parse()?;
            let outcome = corpus::ingest(&input, source, split)?;
            corpus::export(&outcome.problems, &out)?;
            let rejects_path = corpus::write_rejects(&input, &outcome.rejects)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "ingested {} problem(s), {} reject(s) -> {}",
                outcome.problems.len(),
                outcome.rejects.len(),
                out.display()
            );
            ctx.finish(&cfg, &[input.as_path()])?;
            if outcome.rejects.is_empty() {
                Ok(0)
            } else {
                eprintln!("rejects written to {}", rejects_path.display());
                Ok(1)
            }
        }

        Command::Annotate {
            corpus: corpus_path,
            out,
            checkpoint,
            teacher,
        } => {
            let teacher = resolve_teacher(&teacher, &cfg)?;
            let problems = corpus::load_canonical(&corpus_path)?;
            let checkpoint = checkpoint.unwrap_or_else(|| {
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".ckpt.jsonl");
                out.with_file_name(name)
            });
            let outcome = annotator::annotate_corpus(&problems, &teacher, &checkpoint)?;
            annotator::write_annotations(&outcome.annotations, &out)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "annotated {} of {} problem(s) ({} request(s) issued) -> {}",
                outcome.annotations.len(),
                problems.len(),
                outcome.requests_issued,
                out.display()
            );
            ctx.finish(&cfg, &[corpus_path.as_path()])?;
            if outcome.failures.is_empty() {
                Ok(0)
            } else {
                let failures_path = out.with_extension("failures.jsonl");
                write_jsonl(&outcome.failures, &failures_path)?;
                eprintln!("failures written to {}", failures_path.display());
                Ok(1)
            }
        }

        Command::Augment {
            corpus: corpus_path,
            out,
            teacher,
        } => {
            let teacher = resolve_teacher(&teacher, &cfg)?;
            let problems = corpus::load_canonical(&corpus_path)?;
            let outcome = annotator::augment_solutions(&problems, &teacher)?;
            write_jsonl(&outcome.augmented, &out)?;
            println!(
                "augmented {} of {} problem(s) -> {}",
                outcome.augmented.len(),
                problems.len(),
                out.display()
            );
            ctx.finish(&cfg, &[corpus_path.as_path()])?;
            if outcome.failures.is_empty() {
                Ok(0)
            } else {
                let failures_path = out.with_extension("failures.jsonl");
                write_jsonl(&outcome.failures, &failures_path)?;
                eprintln!("failures written to {}", failures_path.display());
                Ok(1)
            }
        }

        Command::Compose {
            format,
            corpus: corpus_path,
            annotations,
            reflections,
            out,
        } => {
            let format: CompositionFormat = format.parse()?;
            let problems = corpus::load_canonical(&corpus_path)?;
            let mut ann_by_id: HashMap<String, annotator::ReflectiveAnnotation> = HashMap::new();
            if let Some(path) = &annotations {
                let mut anns = annotator::load_annotations(path)?;
                if let Some(rpath) = &reflections {
                    let refs = annotator::load_reflections(rpath)?;
                    annotator::attach_reflections(&mut anns, &refs);
                }
                for a in anns {
                    ann_by_id.insert(a.problem_id.clone(), a);
                }
            }
            let mut samples = Vec::new();
            #[derive(serde::Serialize)]
            struct ComposeFailure<'a> {
                problem_id: &'a str,
                error: String,
            }
            let mut failures = Vec::new();
            for p in &problems {
                match composer::compose(p, ann_by_id.get(&p.id), format) {
                    Ok(mut s) => samples.append(&mut s),
                    Err(e) => failures.push(ComposeFailure {
                        problem_id: &p.id,
                        error: e.to_string(),
                    }),
                }
            }
            composer::write_dataset(&samples, &out)?;
            println!(
                "composed {} sample(s) from {} problem(s) in format {} -> {}",
                samples.len(),
                problems.len(),
                format,
                out.display()
            );
            let code = if failures.is_empty() {
                0
            } else {
                let failures_path = out.with_extension("failures.jsonl");
                write_jsonl(&failures, &failures_path)?;
                eprintln!("failures written to {}", failures_path.display());
                1
            };
            ctx.finish(&cfg, &[corpus_path.as_path()])?;
            Ok(code)
        }

        Command::Infer {
            corpus: corpus_path,
            mode,
            out,
            student,
        } => {
            let student = resolve_student(&student, &cfg)?;
            let mode: InferenceMode = mode.parse()?;
            let problems = corpus::load_canonical(&corpus_path)?;
            let items = inference::infer_batch(&problems, &student, mode)?;
            let mut results = Vec::new();
            #[derive(serde::Serialize)]
            struct InferFailure {
                problem_id: String,
                error: String,
            }
            let mut failures = Vec::new();
            for item in items {
                match item {
                    inference::BatchItem::Done(r) => results.push(r),
                    inference::BatchItem::Failed { problem_id, error } => {
                        failures.push(InferFailure { problem_id, error })
                    }
                }
            }
            inference::write_results(&results, &out)?;
            println!(
                "inferred {} of {} problem(s) in {} mode -> {}",
                results.len(),
                problems.len(),
                mode,
                out.display()
            );
            ctx.finish(&cfg, &[corpus_path.as_path()])?;
            if failures.is_empty() {
                Ok(0)
            } else {
                let failures_path = out.with_extension("failures.jsonl");
                write_jsonl(&failures, &failures_path)?;
                eprintln!("failures written to {}", failures_path.display());
                Ok(1)
            }
        }

        Command::Evolve {
            corpus: corpus_path,
            dataset,
            rounds,
            test_corpus,
            student,
        } => {
            let student = resolve_student(&student, &cfg)?;
            let problems = corpus::load_canonical(&corpus_path)?;
            if let Some(test_path) = &test_corpus {
                let test_problems = corpus::load_canonical(test_path)?;
                evolve::assert_no_contamination(&problems, &test_problems)?;
            }
            let mut current = composer::load_dataset(&dataset)?;
            std::fs::create_dir_all(&ctx.work_dir).map_err(|e| Error::io(&ctx.work_dir, e))?;
            for round in 1..=rounds {
                let checkpoint = ctx.work_dir.join(format!("round-{round}.checkpoint.jsonl"));
                let (merged, report) =
                    evolve::run_round(&problems, &current, &student, round, Some(&checkpoint))?;
                evolve::write_round_artifacts(&ctx.work_dir, round, &merged, &report)?;
                println!(
                    "round {}: attempted={} parse_ok={} correct={} added={} dataset {} -> {}",
                    report.round,
                    report.attempted,
                    report.parse_ok,
                    report.correct,
                    report.added_after_dedupe,
                    report.dataset_size_before,
                    report.dataset_size_after
                );
                current = merged;
            }
            ctx.finish(&cfg, &[corpus_path.as_path(), dataset.as_path()])?;
            Ok(0)
        }

        Command::Eval {
            benchmark,
            mode,
            out,
            layout,
            name,
            student,
        } => {
            let student = resolve_student(&student, &cfg)?;
            let mode: InferenceMode = mode.parse()?;
            let layout: ReportLayout = layout.parse()?;
            let problems = corpus::load_canonical(&benchmark)?;
            let bench_name = name.unwrap_or_else(|| {
                benchmark
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "benchmark".to_string())
            });
            let report = evaluation::evaluate(&problems, &student, mode, &bench_name)?;
            evaluation::emit_report(std::slice::from_ref(&report), &out, layout)?;
            let json_path = out.with_extension("json");
            evaluation::write_report_json(&report, &json_path)?;
            println!(
                "{}: {}/{} correct ({}%) in {} mode -> {}",
                bench_name,
                report.n_correct,
                report.n_problems,
                report.percent_display(),
                mode,
                out.display()
            );
            let failed = report.per_problem.iter().filter(|p| p.failed).count();
            ctx.finish(&cfg, &[benchmark.as_path()])?;
            if failed == 0 {
                Ok(0)
            } else {
                eprintln!("{failed} problem(s) failed transport and were graded incorrect");
                Ok(1)
            }
        }

        Command::Similarity {
            left,
            right,
            pairs,
            out,
        } => {
            match (left, right, pairs) {
                (Some(a), Some(b), None) => {
                    let triple = similarity::similarity(&a, &b);
                    let line = serde_json::to_string(&triple)?;
                    match out {
                        Some(path) => {
                            std::fs::write(&path, line + "\n").map_err(|e| Error::io(&path, e))?
                        }
                        None => println!("{line}"),
                    }
                }
                (None, None, Some(pairs_path)) => {
                    #[derive(serde::Deserialize)]
                    struct Pair {
                        a: String,
                        b: String,
                    }
                    let text = std::fs::read_to_string(&pairs_path)
                        .map_err(|e| Error::io(&pairs_path, e))?;
                    let mut inputs = Vec::new();
                    for line in text.lines().filter(|l| !l.trim().is_empty()) {
                        let p: Pair = serde_json::from_str(line)?;
                        inputs.push((p.a, p.b));
                    }
                    let triples = similarity::similarity_batch(&inputs);
                    match out {
                        Some(path) => write_jsonl(&triples, &path)?,
                        None => {
                            for t in &triples {
                                println!("{}", serde_json::to_string(t)?);
                            }
                        }
                    }
                }
                _ => {
                    return Err(Error::Config(
                        "pass either --left and --right, or --pairs".into(),
                    ))
                }
            }
            ctx.finish(&cfg, &[])?;
            Ok(0)
        }

        Command::Grade { gold, pred, out } => {
            let gold_problems = corpus::load_canonical(&gold)?;
            let gold_by_id: HashMap<&str, &str> = gold_problems
                .iter()
                .map(|p| (p.id.as_str(), p.gold_answer_raw.as_str()))
                .collect();

            #[derive(serde::Deserialize)]
            struct PredRow {
                #[serde(alias = "problem_id")]
                id: String,
                #[serde(alias = "full_trace", alias = "response_text", alias = "response")]
                trace: String,
            }
            #[derive(serde::Serialize)]
            struct Verdict {
                id: String,
                correct: bool,
                extracted: Option<String>,
                gold: String,
            }

            let text = std::fs::read_to_string(&pred).map_err(|e| Error::io(&pred, e))?;
            let mut verdicts = Vec::new();
            let mut missing = 0usize;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let row: PredRow = serde_json::from_str(line).map_err(|e| Error::Extraction {
                    record: format!("{}:{}", pred.display(), i + 1),
                    reason: e.to_string(),
                })?;
                let Some(gold_answer) = gold_by_id.get(row.id.as_str()) else {
                    missing += 1;
                    eprintln!("warning: no gold answer for id {:?}", row.id);
                    continue;
                };
                let extracted = grader::extract_final_answer(&row.trace).ok();
                let correct = grader::grade(&row.trace, gold_answer);
                verdicts.push(Verdict {
                    id: row.id,
                    correct,
                    extracted,
                    gold: gold_answer.to_string(),
                });
            }
            let out = out.unwrap_or_else(|| {
                let mut name = pred.file_name().unwrap_or_default().to_os_string();
                name.push(".verdicts.jsonl");
                pred.with_file_name(name)
            });
            write_jsonl(&verdicts, &out)?;
            let n_correct = verdicts.iter().filter(|v| v.correct).count();
            println!(
                "accuracy: {}/{} = {}%",
                n_correct,
                verdicts.len(),
                evaluation::percent_one_decimal(n_correct as u64, verdicts.len() as u64)
            );
            ctx.finish(&cfg, &[gold.as_path(), pred.as_path()])?;
            Ok(if missing == 0 { 0 } else { 1 })
        }

        Command::Report {
            inputs,
            out,
            layout,
        } => {
            let layout: ReportLayout = layout.parse()?;
            let mut reports = Vec::new();
            for path in &inputs {
                reports.push(evaluation::load_report_json(path)?);
            }
            evaluation::emit_report(&reports, &out, layout)?;
            println!("report table -> {}", out.display());
            let input_refs: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
            ctx.finish(&cfg, &input_refs)?;
            Ok(0)
        }

        Command::MockServe {
            port,
            config,
            delay_ms,
            delay_ms_per_token,
        } => {
            let mut mock_cfg = match &config {
                Some(path) => MockServerConfig::from_file(path)?,
                None => MockServerConfig::new(mockllm::MockBehavior::TemplateTeacher {
                    teacher_seed: 7,
                }),
            };
            if let Some(d) = delay_ms {
                mock_cfg.delay_ms = d;
            }
            if let Some(d) = delay_ms_per_token {
                mock_cfg.delay_ms_per_token = d;
            }
            // Seeds and delays land in the manifest before serving starts.
            let mut manifest = ctx.manifest;
            manifest.set_config(&mock_cfg)?;
            manifest.write(&ctx.work_dir)?;
            mockllm::serve_blocking(mock_cfg, port)?;
            Ok(0)
        }
    }
}
