//! Acceptance suite: one test per criterion, each printing a labeled
//! pass line and holding to its stated runtime budget. Run with
//! `cargo test -p metaladder --test acceptance -- --nocapture`.

mod common;

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use metaladder::annotator::ReflectiveAnnotation;
use metaladder::composer::{self, CompositionFormat};
use metaladder::corpus::{Problem, Source, Split};
use metaladder::evaluation::{self, ReportLayout};
use metaladder::evolve;
use metaladder::grader::{self, normalize};
use metaladder::inference::{self, InferenceMode, StudentConfig};
use metaladder::mockllm::{self, TraceStyle};
use metaladder::similarity;

fn finish(criterion: &str, started: Instant, budget: Duration) {
    let elapsed = started.elapsed();
    assert!(
        elapsed <= budget,
        "{criterion} exceeded its {budget:?} budget: {elapsed:?}"
    );
    println!("[PASS] {criterion} ({} ms)", elapsed.as_millis());
}

// --- criterion 1 -----------------------------------------------------------

#[test]
fn criterion_1_prompt_fidelity() {
    let started = Instant::now();

    let golden_annotation = include_str!("golden/annotation_prompt.txt");
    let golden_augment = include_str!("golden/answer_augmentation_prompt.txt");

    // Rendering with the literal slot markers must reproduce the golden
    // template byte-exactly.
    assert_eq!(
        metaladder::prompts::render_annotation_prompt_text("{problem}", "{solution}"),
        golden_annotation,
        "annotation template deviates from the golden file"
    );
    assert_eq!(
        metaladder::prompts::render_augment_prompt_text("{problem}", "{solution}"),
        golden_augment,
        "augmentation template deviates from the golden file"
    );

    // Filled render equals the golden file with only the two slots swapped.
    let question = "Michael buys his suit for $430 and shoes for $190. So, if he gets a $100 discount, what was the amount that he paid to the seller?";
    let solution = "430 + 190 = 620. 620 - 100 = 520. The answer is 520.";
    let rendered = metaladder::prompts::render_annotation_prompt_text(question, solution);
    let expected = golden_annotation
        .replacen("{problem}", question, 1)
        .replacen("{solution}", solution, 1);
    assert_eq!(rendered, expected);
    assert!(rendered.starts_with("You are a professional math teacher"));
    assert!(rendered.contains("### Original Problem:\nMichael buys his suit for $430"));

    let augmented = metaladder::prompts::render_augment_prompt_text(question, solution);
    let expected = golden_augment
        .replacen("{problem}", question, 1)
        .replacen("{solution}", solution, 1);
    assert_eq!(augmented, expected);

    finish("criterion 1: prompt fidelity", started, Duration::from_secs(1));
}

// --- criterion 2 -----------------------------------------------------------

fn fixture_pair(i: usize) -> (Problem, ReflectiveAnnotation) {
    let n = 7 + 3 * i as i64;
    let (question, solution) = match i % 5 {
        0 => (
            format!("A courier delivers {n} parcels before noon and twice as many after. How many parcels in total on route {i}?"),
            format!("Before noon: {n}. After: {}. Total {} + {} = {}. The answer is {}.", 2 * n, n, 2 * n, 3 * n, 3 * n),
        ),
        1 => (
            format!("Ein Zug fährt {n} km östlich, dann {} km weiter. Wie weit ist er gefahren? (Fall {i})", n + 5),
            format!("Wir addieren die Strecken:\n{n} + {} = {}.\nThe answer is {}.", n + 5, 2 * n + 5, 2 * n + 5),
        ),
        2 => (
            format!("Compute the sum of the roots of $x^2 - {n}x + {}$ for case {i}.", n - 1),
            format!("By Vieta's formulas the sum equals the negated linear coefficient.\nThus, the answer is $\\boxed{{{n}}}$."),
        ),
        3 => (
            format!("List prices: {n}, {}, and {}. What is the largest minus the smallest? (#{i})", n + 2, n + 9),
            format!("1. Largest: {}.\n\n2. Smallest: {n}.\n\n3. Difference: {} - {n} = 9.\n\nThe answer is 9.", n + 9, n + 9),
        ),
        _ => (
            format!("A jacket costs ${n} with a 10% member discount on order {i}. What is the sticker price in dollars?"),
            format!("The sticker price is unchanged by the discount question.\nThe answer is {n}."),
        ),
    };
    let problem = Problem {
        id: format!("fix-{i:03}"),
        source: Source::Custom,
        split: Split::Train,
        question,
        gold_solution: solution.clone(),
        gold_answer_raw: grader::extract_final_answer(&solution).unwrap(),
        subject: None,
        level: None,
    };
    let analog_answer = 100 + i as i64;
    let annotation = ReflectiveAnnotation {
        problem_id: problem.id.clone(),
        strategy: format!(
            "This is a staged arithmetic problem (variant {i}). The solution method involves extracting the quantities, ordering the operations, and checking the result against the question."
        ),
        analog_question: format!("A related task {i}: combine the adjusted quantities and report the total."),
        analog_solution: format!(
            "1. Read off the adjusted quantities.\n2. Combine them in order.\nThe answer is {analog_answer}."
        ),
        analog_answer_raw: Some(analog_answer.to_string()),
        reflection: Some(format!(
            "Key idea for case {i}: the operation order is forced by the narrative, so restating the question prevents sign slips."
        )),
        teacher_model: "fixture".into(),
        teacher_temperature: 0.7,
    };
    (problem, annotation)
}

#[test]
fn criterion_2_format_round_trip() {
    let started = Instant::now();

    let ends_in_final_c = [
        CompositionFormat::Cot,
        CompositionFormat::Metaladder,
        CompositionFormat::PreRefaug,
        CompositionFormat::AblationNoStrategy,
        CompositionFormat::AblationNoAnalogy,
        CompositionFormat::AblationNoRestate,
    ];

    let mut checked = 0usize;
    for i in 0..50 {
        let (problem, annotation) = fixture_pair(i);
        for format in CompositionFormat::ALL {
            let samples = composer::compose(&problem, Some(&annotation), format).unwrap();
            assert_eq!(samples.len(), format.samples_per_problem(), "{format}");
            for (k, sample) in samples.iter().enumerate() {
                let parsed = composer::parse_response_sections(&sample.response)
                    .unwrap_or_else(|e| panic!("fixture {i} format {format}: {e}"));
                assert_eq!(
                    parsed, sample.response_sections,
                    "byte-exact round trip failed: fixture {i}, format {format}, sample {k}"
                );
                assert_eq!(
                    composer::render_response(&parsed, format),
                    sample.response,
                    "render inverse failed: fixture {i}, format {format}, sample {k}"
                );
                checked += 1;
            }

            // Grading law: teacher-round samples whose response ends in the
            // final solution grade true against gold.
            if ends_in_final_c.contains(&format) {
                assert!(
                    grader::grade(&samples[0].response, &problem.gold_answer_raw),
                    "grading law failed: fixture {i}, format {format}"
                );
            }
            if matches!(
                format,
                CompositionFormat::MetaladderReverse | CompositionFormat::AnalogyAug
            ) {
                let analog_gold = annotation.analog_answer_raw.as_ref().unwrap();
                assert!(
                    grader::grade(&samples[1].response, analog_gold),
                    "swapped-sample grading failed: fixture {i}, format {format}"
                );
            }
        }
    }
    assert_eq!(checked, 50 * 12, "50 fixtures x 10 formats (two emit pairs)");

    finish("criterion 2: format round-trip", started, Duration::from_secs(5));
}

// --- criterion 3 -----------------------------------------------------------

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0
    }
    fn in_range(&mut self, lo: i64, hi: i64) -> i64 {
        lo + (self.next() % (hi - lo + 1) as u64) as i64
    }
}

/// Independent brute-force rational equality: cross multiplication in
/// i128, no shared code with the grader.
fn rational_oracle_eq(n1: i64, d1: i64, n2: i64, d2: i64) -> bool {
    (n1 as i128) * (d2 as i128) == (n2 as i128) * (d1 as i128)
}

fn labeled_pairs() -> Vec<(String, String, bool)> {
    let mut pairs: Vec<(String, String, bool)> = vec![
        // Worked-case anchors.
        ("595".into(), "595".into(), true),
        ("600".into(), "595".into(), false),
        (r"\frac{6}{5}".into(), "1.2".into(), true),
        (r"\frac{6}{5}".into(), "6/5".into(), true),
        (r"$\frac{6}{5}$".into(), "1.2".into(), true),
        ("25,000".into(), "25000".into(), true),
        ("25000".into(), "25,000".into(), true),
        (r"-\frac{2}{\sqrt{3}}".into(), r"-2/sqrt(3)".into(), true),
        (r"$-\frac{2}{\sqrt{3}}$".into(), r"-\frac{2}{\sqrt{3}}".into(), true),
        // Conservative text rule: algebraically equal radicals differ.
        (r"\frac{2\sqrt{3}}{3}".into(), r"2/\sqrt{3}".into(), false),
        ("$750".into(), "750".into(), true),
        ("750 dollars".into(), "750".into(), true),
        ("513 people".into(), "513".into(), true),
        ("50%".into(), "50".into(), true),
        ("52".into(), "12".into(), false),
        ("15".into(), "8".into(), false),
        ("672".into(), "672.0".into(), true),
        ("1".into(), "0".into(), false),
        ("3".into(), "three".into(), false),
        ("-\\sqrt{2}".into(), "-sqrt(2)".into(), true),
        ("x = 103 or x = 97".into(), "x = 103 or x = 97".into(), true),
        ("x = 103 or x = 97".into(), "x = 104 or x = 97".into(), false),
        ("0.5".into(), "1/2".into(), true),
        ("0.5".into(), ".5".into(), true),
        ("1.1999".into(), "6/5".into(), false),
        ("-3".into(), "-3.0".into(), true),
        ("-3".into(), "3".into(), false),
        ("1,234,567".into(), "1234567".into(), true),
        ("100000".into(), "25000".into(), false),
        ("pi".into(), r"\pi".into(), true),
    ];

    // Systematic surface forms around a pool of rationals.
    let values: [(i64, i64); 18] = [
        (1, 2), (6, 5), (3, 4), (22, 7), (5, 1), (595, 1), (513, 1), (672, 1),
        (25000, 1), (13, 10), (7, 8), (-6, 5), (-1, 3), (9, 16), (101, 4),
        (2, 3), (17, 20), (840, 1),
    ];
    for (n, d) in values {
        let canonical = if d == 1 { format!("{n}") } else { format!("{n}/{d}") };
        let mut forms = vec![
            canonical.clone(),
            format!("\\frac{{{n}}}{{{d}}}"),
            format!("{}/{}", 2 * n, 2 * d),
            format!("$\\frac{{{n}}}{{{d}}}$"),
        ];
        // Terminating decimal form when the reduced denominator is 2^a 5^b.
        let mut den = d.abs();
        while den % 2 == 0 {
            den /= 2;
        }
        while den % 5 == 0 {
            den /= 5;
        }
        if den == 1 {
            forms.push(format!("{}", n as f64 / d as f64));
        }
        for f in forms {
            pairs.push((f, canonical.clone(), true));
        }
        pairs.push((format!("{}/{}", n + d, d), canonical.clone(), false));
        pairs.push((format!("{}", n as f64 / d as f64 + 1.0), canonical.clone(), false));
    }
    pairs
}

#[test]
fn criterion_3_grader_oracle_suite() {
    let started = Instant::now();

    let pairs = labeled_pairs();
    assert!(pairs.len() >= 200, "oracle corpus has {} pairs", pairs.len());
    for (a, b, expected) in &pairs {
        let na = normalize(a);
        let nb = normalize(b);
        let got = grader::is_equivalent(&na, &nb);
        assert_eq!(
            got, *expected,
            "disagreement on ({a:?}, {b:?}): normalized ({:?}, {:?})",
            na.text, nb.text
        );
        // Reflexivity, symmetry, idempotent normalization.
        assert!(grader::is_equivalent(&na, &na));
        assert_eq!(grader::is_equivalent(&nb, &na), got);
        assert_eq!(normalize(&na.text), na, "normalize not idempotent on {a:?}");

        // The same verdicts must hold through full trace grading.
        let trace = format!("Some working first.\nFinal Answer: {a}");
        assert_eq!(grader::grade(&trace, b), *expected, "grade() differs on {a:?} vs {b:?}");
    }

    // Exact rational arithmetic against the independent cross-multiplication
    // oracle over 10^4 random pairs, a quarter of them forced equal via a
    // shared unreduced scale factor.
    let mut rng = Lcg(0x5eed_0017);
    let mut eq_seen = 0usize;
    for trial in 0..10_000 {
        let n1 = rng.in_range(-1000, 1000);
        let d1 = rng.in_range(1, 1000);
        let (n2, d2) = if trial % 4 == 0 {
            let k = rng.in_range(1, 16);
            (n1 * k, d1 * k)
        } else {
            (rng.in_range(-1000, 1000), rng.in_range(1, 1000))
        };
        let expected = rational_oracle_eq(n1, d1, n2, d2);
        let got = grader::is_equivalent(
            &normalize(&format!("{n1}/{d1}")),
            &normalize(&format!("{n2}/{d2}")),
        );
        assert_eq!(got, expected, "rational oracle disagrees on {n1}/{d1} vs {n2}/{d2}");
        if expected {
            eq_seen += 1;
        }
    }
    assert!(eq_seen >= 2500, "oracle run degenerate: {eq_seen} equal pairs");

    finish("criterion 3: grader oracle suite", started, Duration::from_secs(10));
}

// --- criterion 4 -----------------------------------------------------------

#[test]
fn criterion_4_shortcut_mechanics() {
    let started = Instant::now();

    let problems = common::synth_problems(6, Split::Test);
    let mut mock_cfg = common::scripted_student_config(
        &problems,
        problems.iter().map(|p| p.id.clone()),
        TraceStyle::Metaladder,
    );
    // Per-token latency makes wall time scale with generation length.
    mock_cfg.delay_ms_per_token = 2;
    let server = mockllm::spawn(mock_cfg, 0).unwrap();
    let cfg = StudentConfig::new(&server.base_url, "mock-student");

    let mut full_wall_total = 0u64;
    let mut short_wall_total = 0u64;
    for p in &problems {
        let full = inference::infer_full(p, &cfg).unwrap();
        let short = inference::infer_shortcut(p, &cfg).unwrap();

        // Exactly one forced injection, no analog content past the stop.
        assert_eq!(short.full_trace.matches("\n\nOriginal Problem:\n").count(), 1);
        assert_eq!(short.full_trace.matches("Similar Problem:").count(), 0);
        assert!(!short.no_shortcut_boundary);
        assert_eq!(
            short.full_trace,
            format!("{}{}{}", short.phase1_text, short.injected_text, short.phase2_text)
        );

        // Independent token accounting from the full trace text.
        let trace = &full.full_trace;
        let analog_start = trace.find("\n\nSimilar Problem:\n").unwrap();
        let restate_start = trace.find("\n\nOriginal Problem:\n").unwrap();
        let analog_tokens =
            metaladder::client::whitespace_tokens(&trace[analog_start..restate_start]);
        let injected_tokens = metaladder::client::whitespace_tokens(&short.injected_text);

        // Spec bound: shortcut saves at least the analog section minus the
        // injected text. The mock admits an exact balance equation.
        assert!(
            short.generated_token_count
                <= full.generated_token_count - analog_tokens + injected_tokens,
            "token inequality failed for {}",
            p.id
        );
        assert!(short.generated_token_count < full.generated_token_count);
        assert_eq!(
            short.generated_token_count,
            full.generated_token_count - analog_tokens - injected_tokens,
            "exact token balance failed for {}",
            p.id
        );

        // Both modes end at the same final solution here.
        assert_eq!(short.extracted_answer_raw, full.extracted_answer_raw);

        full_wall_total += full.wall_time_ms;
        short_wall_total += short.wall_time_ms;
    }

    // Total inference time direction: shortcut beats full.
    assert!(
        short_wall_total < full_wall_total,
        "shortcut {short_wall_total} ms was not faster than full {full_wall_total} ms"
    );

    finish("criterion 4: shortcut mechanics", started, Duration::from_secs(30));
}

// --- criterion 5 -----------------------------------------------------------

#[test]
fn criterion_5_self_evolution_accounting() {
    let started = Instant::now();

    let problems = common::synth_problems(100, Split::Train);
    let correct_ids = common::even_ids(&problems);
    assert_eq!(correct_ids.len(), 50);
    let server = mockllm::spawn(
        common::scripted_student_config(&problems, correct_ids.clone(), TraceStyle::Metaladder),
        0,
    )
    .unwrap();
    let mut cfg = StudentConfig::new(&server.base_url, "mock-student");
    cfg.parallelism = 8;

    let dataset: Vec<_> = problems
        .iter()
        .flat_map(|p| composer::compose(p, None, CompositionFormat::Cot).unwrap())
        .collect();
    assert_eq!(dataset.len(), 100);

    let (merged, report) = evolve::run_round(&problems, &dataset, &cfg, 1, None).unwrap();
    assert_eq!(report.attempted, 100);
    assert_eq!(report.parse_ok, 100);
    assert_eq!(report.correct, 50);
    assert_eq!(report.added_after_dedupe, 50);
    assert_eq!(report.dataset_size_before, 100);
    assert_eq!(report.dataset_size_after, 150);
    assert_eq!(merged.len(), 150);

    // The added set is exactly the scripted correct set.
    let added_ids: BTreeSet<&str> = evolve::round_additions(&merged, 1)
        .iter()
        .map(|s| s.origin_id.as_str())
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let expected_ids: BTreeSet<&str> = correct_ids.iter().map(|s| s.as_str()).collect();
    assert_eq!(added_ids, expected_ids);

    // Immediate second round is a dedupe fixed point.
    let (merged2, report2) = evolve::run_round(&problems, &merged, &cfg, 2, None).unwrap();
    assert_eq!(report2.attempted, 100);
    assert_eq!(report2.correct, 50);
    assert_eq!(report2.added_after_dedupe, 0);
    assert_eq!(report2.dataset_size_after, 150);
    assert_eq!(merged2.len(), 150);

    finish("criterion 5: self-evolution accounting", started, Duration::from_secs(60));
}

// --- criterion 6 -----------------------------------------------------------

#[test]
fn criterion_6_pass_at_1_aggregation() {
    let started = Instant::now();

    // Hand-counted fixture benchmark: 3 correct of 4.
    let problems = common::synth_problems(4, Split::Test);
    let correct: Vec<String> = problems[..3].iter().map(|p| p.id.clone()).collect();
    let server = mockllm::spawn(
        common::scripted_student_config(&problems, correct, TraceStyle::Metaladder),
        0,
    )
    .unwrap();
    let cfg = StudentConfig::new(&server.base_url, "mock-student");
    let report =
        evaluation::evaluate(&problems, &cfg, InferenceMode::Full, "fixture").unwrap();
    assert_eq!(report.n_correct, 3);
    assert_eq!(report.n_problems, 4);
    assert_eq!(report.percent_display(), "75.0");

    let dir = tempfile::tempdir().unwrap();
    let md_path = dir.path().join("report.md");
    let csv_path = dir.path().join("report.csv");
    evaluation::emit_report(std::slice::from_ref(&report), &md_path, ReportLayout::Markdown)
        .unwrap();
    evaluation::emit_report(std::slice::from_ref(&report), &csv_path, ReportLayout::Csv)
        .unwrap();
    let md = std::fs::read_to_string(&md_path).unwrap();
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(md.contains("| full | 75.0 | 75.0 |"), "markdown:\n{md}");
    let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields, ["full", "75.0", "75.0"]);

    // Average-column arithmetic over the six reference accuracies.
    let counts = [615u64, 194, 732, 166, 195, 263];
    let names = ["gsm8k", "math", "asdiv", "cm", "ge", "dm"];
    let reports: Vec<_> = names
        .iter()
        .zip(counts)
        .map(|(name, c)| evaluation::BenchmarkReport {
            benchmark_name: name.to_string(),
            mode: InferenceMode::Full,
            n_problems: 1000,
            n_correct: c as usize,
            accuracy: c as f64 / 1000.0,
            total_wall_time_ms: 0,
            per_problem: Vec::new(),
        })
        .collect();
    let table = evaluation::render_report_table(&reports, ReportLayout::Markdown).unwrap();
    assert!(
        table.contains("| full | 61.5 | 19.4 | 73.2 | 16.6 | 19.5 | 26.3 | 36.1 |"),
        "average recomputation failed:\n{table}"
    );
    assert_eq!(
        evaluation::average_percent_display(&[(615, 1000), (194, 1000)]),
        "40.5"
    );

    // Degenerate zero-correct benchmark.
    let zero_server = mockllm::spawn(
        common::scripted_student_config(&problems, Vec::<String>::new(), TraceStyle::Metaladder),
        0,
    )
    .unwrap();
    let zero_cfg = StudentConfig::new(&zero_server.base_url, "mock-student");
    let zero = evaluation::evaluate(&problems, &zero_cfg, InferenceMode::Full, "zero").unwrap();
    assert_eq!(zero.n_correct, 0);
    assert_eq!(zero.percent_display(), "0.0");

    finish("criterion 6: pass@1 aggregation", started, Duration::from_secs(5));
}

// --- criterion 7 -----------------------------------------------------------

/// Textbook full-matrix edit-distance oracle, independent of the two-row
/// implementation under test.
fn levenshtein_oracle(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        dp[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            dp[i][j] = (dp[i - 1][j] + 1)
                .min(dp[i][j - 1] + 1)
                .min(dp[i - 1][j - 1] + cost);
        }
    }
    dp[a.len()][b.len()]
}

fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn criterion_7_similarity_identity_and_oracle() {
    let started = Instant::now();

    // Identity row: exact 1.00 / 0.00 / 0.
    for x in [
        "Compute (2^3)(5^5) in your head.",
        "Exits on a highway are numbered consecutively from 1 to 50.",
        "Ein Zug fährt 42 km — 東京 (unicode mix)",
    ] {
        let t = similarity::similarity(x, x);
        assert_eq!(t.cosine, 1.0);
        assert_eq!(t.jaccard_distance, 0.0);
        assert_eq!(t.levenshtein_distance, 0);
    }
    assert_eq!(similarity::levenshtein("kitten", "sitting"), 3);

    // Exhaustive oracle agreement over a 3-letter alphabet. Full
    // enumeration is quadratic in the string count, so the exhaustive
    // bound is length 5 (364^2 pairs); lengths up to 12 are covered by a
    // seeded sample below.
    let strings = all_strings(&['a', 'b', 'c'], 5);
    assert_eq!(strings.len(), 364);
    for sa in &strings {
        for sb in &strings {
            assert_eq!(
                similarity::levenshtein(sa, sb),
                levenshtein_oracle(sa, sb),
                "oracle mismatch on ({sa:?}, {sb:?})"
            );
        }
    }

    let mut rng = Lcg(0x1e7e_2024);
    let alphabet = ['a', 'b', 'c'];
    let mut rand_string = |rng: &mut Lcg| {
        let len = (rng.next() % 13) as usize;
        (0..len)
            .map(|_| alphabet[(rng.next() % 3) as usize])
            .collect::<String>()
    };
    for _ in 0..5_000 {
        let sa = rand_string(&mut rng);
        let sb = rand_string(&mut rng);
        assert_eq!(similarity::levenshtein(&sa, &sb), levenshtein_oracle(&sa, &sb));
        // Symmetry for the full triple.
        let ab = similarity::similarity(&sa, &sb);
        let ba = similarity::similarity(&sb, &sa);
        assert_eq!(ab, ba);
    }

    finish("criterion 7: similarity identity row", started, Duration::from_secs(30));
}

// --- criterion 8 -----------------------------------------------------------

struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn_mock_serve(config_path: &Path, work_dir: &Path) -> (ChildGuard, String) {
    let child = Command::new(env!("CARGO_BIN_EXE_metaladder"))
        .args([
            "mock-serve",
            "--port",
            "0",
            "--config",
            config_path.to_str().unwrap(),
            "--work-dir",
            work_dir.to_str().unwrap(),
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn mock-serve");
    let mut guard = ChildGuard(child);
    let stdout = guard.0.stdout.take().expect("child stdout");
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).expect("read listen line");
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected mock-serve banner: {line:?}"))
        .to_string();
    (guard, url)
}

fn run_cli(args: &[&str]) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_metaladder"))
        .args(args)
        .stdout(Stdio::null())
        .stderr(Stdio::inherit())
        .status()
        .expect("run cli");
    status.code().unwrap_or(-1)
}

/// One full offline pipeline pass in `dir`; returns the deterministic
/// artifacts keyed by name.
fn run_pipeline(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let problems = common::synth_problems(20, Split::Train);
    let raw = dir.join("raw.jsonl");
    {
        let mut f = std::fs::File::create(&raw).unwrap();
        for p in &problems {
            writeln!(
                f,
                "{}",
                serde_json::json!({"question": p.question, "solution": p.gold_solution})
            )
            .unwrap();
        }
    }
    let work = dir.join("work");
    let corpus_path = dir.join("corpus.jsonl");
    let work_str = work.to_str().unwrap();

    assert_eq!(
        run_cli(&[
            "ingest",
            "--input",
            raw.to_str().unwrap(),
            "--format",
            "custom",
            "--split",
            "train",
            "--out",
            corpus_path.to_str().unwrap(),
            "--work-dir",
            work_str,
        ]),
        0
    );
    let ingested = metaladder::corpus::load_canonical(&corpus_path).unwrap();
    assert_eq!(ingested.len(), 20);

    // Teacher mock.
    let teacher_cfg_path = dir.join("teacher.json");
    let mut teacher_cfg = common::teacher_config(7);
    teacher_cfg.served_models = Some(["mock-teacher".to_string()].into_iter().collect());
    std::fs::write(
        &teacher_cfg_path,
        serde_json::to_string_pretty(&teacher_cfg).unwrap(),
    )
    .unwrap();
    let (_teacher_guard, teacher_url) = spawn_mock_serve(&teacher_cfg_path, &work);

    let annotations = dir.join("annotations.jsonl");
    assert_eq!(
        run_cli(&[
            "annotate",
            "--corpus",
            corpus_path.to_str().unwrap(),
            "--out",
            annotations.to_str().unwrap(),
            "--endpoint",
            &teacher_url,
            "--model",
            "mock-teacher",
            "--work-dir",
            work_str,
        ]),
        0
    );

    let dataset = dir.join("dataset.jsonl");
    assert_eq!(
        run_cli(&[
            "compose",
            "--format",
            "metaladder",
            "--corpus",
            corpus_path.to_str().unwrap(),
            "--annotations",
            annotations.to_str().unwrap(),
            "--out",
            dataset.to_str().unwrap(),
            "--work-dir",
            work_str,
        ]),
        0
    );
    assert_eq!(
        std::fs::read_to_string(&dataset).unwrap().lines().count(),
        20
    );

    // Student mock: correct on the even half.
    let student_cfg_path = dir.join("student.json");
    let mut student_cfg = common::scripted_student_config(
        &ingested,
        common::even_ids(&ingested),
        TraceStyle::Metaladder,
    );
    student_cfg.served_models = Some(["mock-student".to_string()].into_iter().collect());
    std::fs::write(
        &student_cfg_path,
        serde_json::to_string_pretty(&student_cfg).unwrap(),
    )
    .unwrap();
    let (_student_guard, student_url) = spawn_mock_serve(&student_cfg_path, &work);

    assert_eq!(
        run_cli(&[
            "evolve",
            "--corpus",
            corpus_path.to_str().unwrap(),
            "--dataset",
            dataset.to_str().unwrap(),
            "--rounds",
            "1",
            "--endpoint",
            &student_url,
            "--model",
            "mock-student",
            "--work-dir",
            work_str,
        ]),
        0
    );
    let report: evolve::EvolveRoundReport = serde_json::from_str(
        &std::fs::read_to_string(work.join("round-1.report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report.attempted, 20);
    assert_eq!(report.correct, 10);
    assert_eq!(report.added_after_dedupe, 10);
    assert_eq!(report.dataset_size_after, 30);

    for (mode, out_name) in [("full", "eval-full.md"), ("shortcut", "eval-shortcut.md")] {
        assert_eq!(
            run_cli(&[
                "eval",
                "--benchmark",
                corpus_path.to_str().unwrap(),
                "--mode",
                mode,
                "--out",
                dir.join(out_name).to_str().unwrap(),
                "--name",
                "synthetic",
                "--endpoint",
                &student_url,
                "--model",
                "mock-student",
                "--work-dir",
                work_str,
            ]),
            0
        );
    }

    // Deterministic artifacts only: the eval JSON twins carry wall times.
    let mut artifacts = std::collections::BTreeMap::new();
    for (name, path) in [
        ("corpus.jsonl", corpus_path.clone()),
        ("annotations.jsonl", annotations.clone()),
        ("dataset.jsonl", dataset.clone()),
        ("round-1.additions.jsonl", work.join("round-1.additions.jsonl")),
        ("round-1.report.json", work.join("round-1.report.json")),
        ("dataset-round-1.jsonl", work.join("dataset-round-1.jsonl")),
        ("eval-full.md", dir.join("eval-full.md")),
        ("eval-shortcut.md", dir.join("eval-shortcut.md")),
    ] {
        artifacts.insert(name.to_string(), std::fs::read(&path).unwrap());
    }
    artifacts
}

#[test]
fn criterion_8_end_to_end_offline_pipeline() {
    let started = Instant::now();

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let run_a = run_pipeline(dir_a.path());
    let run_b = run_pipeline(dir_b.path());

    assert_eq!(run_a.len(), run_b.len());
    for (name, bytes_a) in &run_a {
        let bytes_b = &run_b[name];
        assert_eq!(bytes_a, bytes_b, "artifact {name} differs between runs");
    }

    // Both eval tables show the scripted 10-of-20 accuracy.
    let eval_full = String::from_utf8(run_a["eval-full.md"].clone()).unwrap();
    assert!(eval_full.contains("| full | 50.0 | 50.0 |"), "{eval_full}");
    let eval_short = String::from_utf8(run_a["eval-shortcut.md"].clone()).unwrap();
    assert!(eval_short.contains("| shortcut | 50.0 | 50.0 |"), "{eval_short}");

    // Usage validation: eval without an endpoint and without a config
    // file is a usage error (exit 2).
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("missing-bench.jsonl");
    std::fs::write(&bench, "").unwrap();
    let code = run_cli(&[
        "eval",
        "--benchmark",
        bench.to_str().unwrap(),
        "--mode",
        "shortcut",
        "--out",
        dir.path().join("r.md").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);

    finish(
        "criterion 8: end-to-end offline pipeline",
        started,
        Duration::from_secs(120),
    );
}

// Silence the unused-helper lint for items only some tests use.
#[allow(dead_code)]
fn _keep(_: PathBuf) {}
