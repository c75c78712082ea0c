//! Final-answer extraction, normalization, and exact equivalence.
//!
//! This is the correctness oracle behind evaluation and self-evolution
//! filtering. Numeric answers are compared with exact rational arithmetic
//! (never floating point with a tolerance): `6/5` equals `1.2`, and
//! `1.1999` does not. Expressions that do not reduce to a plain rational
//! or finite decimal (radicals, pi, intervals, tuples) are compared as
//! normalized text, which is deliberately conservative: `2\sqrt{3}/3` and
//! `2/\sqrt{3}` are mathematically equal but compare unequal here.

use std::sync::LazyLock;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Zero};
use regex::Regex;

use crate::error::{Error, Result};

/// How a normalized answer is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerKind {
    Rational,
    Decimal,
    NormalizedText,
}

/// A normalized final answer. `value` is present exactly for the numeric
/// kinds; `text` keeps the normalized surface form for every kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalAnswer {
    pub kind: AnswerKind,
    pub value: Option<BigRational>,
    pub text: String,
}

impl CanonicalAnswer {
    pub fn numerator(&self) -> Option<&BigInt> {
        self.value.as_ref().map(|v| v.numer())
    }

    pub fn denominator(&self) -> Option<&BigInt> {
        self.value.as_ref().map(|v| v.denom())
    }
}

static BOXED: &str = "\\boxed{";
static FINAL_ANSWER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)final answer\s*(?:is)?\s*:?\s*").unwrap());
static ANSWER_IS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)the answer is\s*:?\s*").unwrap());
static HASH_TAIL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"####\s*").unwrap());
static NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").unwrap());

/// Take the contents of a `\boxed{...}` starting at `start` (index of the
/// opening brace), balancing nested braces. Returns `None` when the span
/// never closes (e.g. a truncated trace).
fn balanced_braces(text: &str, start: usize) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        match b {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start + 1..i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn last_boxed(trace: &str) -> Option<&str> {
    let mut best = None;
    let mut from = 0;
    while let Some(pos) = trace[from..].find(BOXED) {
        let open = from + pos + BOXED.len() - 1;
        if let Some(content) = balanced_braces(trace, open) {
            best = Some(content);
        }
        from = from + pos + BOXED.len();
    }
    best
}

/// Text following a cue like "Final Answer:" up to the end of the line,
/// with a trailing sentence period stripped.
fn span_after(trace: &str, re: &Regex) -> Option<String> {
    let m = re.find_iter(trace).last()?;
    let rest = &trace[m.end()..];
    let line = rest.lines().next().unwrap_or("").trim();
    if line.is_empty() {
        return None;
    }
    // A boxed span inside the cue line wins over the raw line text.
    if let Some(content) = last_boxed(line) {
        return Some(content.trim().to_string());
    }
    let line = line.trim_end_matches(['.', ' ']);
    if line.is_empty() {
        None
    } else {
        Some(line.to_string())
    }
}

/// Extract the final-answer span from a free-form reasoning trace.
///
/// Priority cascade: last balanced `\boxed{...}`, last "Final Answer:"
/// span, last "the answer is" span, last `#### ` tail, last standalone
/// number anywhere in the trace.
pub fn extract_final_answer(trace: &str) -> Result<String> {
    if let Some(content) = last_boxed(trace) {
        let content = content.trim();
        if !content.is_empty() {
            return Ok(content.to_string());
        }
    }
    if let Some(span) = span_after(trace, &FINAL_ANSWER_RE) {
        return Ok(span);
    }
    if let Some(span) = span_after(trace, &ANSWER_IS_RE) {
        return Ok(span);
    }
    if let Some(span) = span_after(trace, &HASH_TAIL_RE) {
        return Ok(span);
    }
    if let Some(m) = NUMBER_RE.find_iter(trace).last() {
        return Ok(m.as_str().to_string());
    }
    Err(Error::NoAnswer)
}

/// `#### ` tail extraction used for GSM8K-style gold solutions.
pub fn extract_hash_tail(solution: &str) -> Option<String> {
    span_after(solution, &HASH_TAIL_RE)
}

/// Last `\boxed{...}` extraction used for MATH-style gold solutions.
/// Also reports how many boxed spans the solution contains.
pub fn extract_last_boxed(solution: &str) -> Option<(String, usize)> {
    let mut count = 0usize;
    let mut from = 0;
    while let Some(pos) = solution[from..].find(BOXED) {
        count += 1;
        from = from + pos + BOXED.len();
    }
    last_boxed(solution).map(|s| (s.trim().to_string(), count))
}

// --- normalization -------------------------------------------------------

static LATEX_SPACING_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\[,;:! ]|\\quad|\\qquad|~").unwrap());
static TEXT_CMD_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\(?:text|mbox|mathrm|textbf)\{([^{}]*)\}").unwrap());
static THOUSANDS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?\d{1,3}(,\d{3})+(\.\d+)?$").unwrap());
static INT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[+-]?\d+$").unwrap());
static FRACTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([+-]?\d+)\s*/\s*(\d+)$").unwrap());
static DECIMAL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([+-]?)(\d*)\.(\d+)$").unwrap());
static UNIT_TAIL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^([+-]?[\d,./]+)\s+(dollars?|cents?|people|students?|employees?|units?|items?|percent|points?|hours?|minutes?|seconds?|days?|years?|km|cm|mm|m|kg|g|miles?|feet|foot|inches|gems?|coins?|games?)\.?$")
        .unwrap()
});

/// Rewrite `\frac{A}{B}`, `\dfrac`, `\tfrac`, `\cfrac` to `A/B`, working
/// innermost-out so nested fractions resolve.
fn rewrite_frac(mut s: String) -> String {
    for cmd in ["\\dfrac", "\\tfrac", "\\cfrac"] {
        s = s.replace(cmd, "\\frac");
    }
    loop {
        let Some(pos) = s.rfind("\\frac") else {
            return s;
        };
        let after = pos + "\\frac".len();
        let rest = &s[after..];
        let Some(open_a) = rest.find('{') else {
            return s;
        };
        let Some(a) = balanced_braces(&s, after + open_a) else {
            return s;
        };
        let a_end = after + open_a + a.len() + 2;
        let rest_b = &s[a_end..];
        let Some(open_b) = rest_b.find('{') else {
            return s;
        };
        if !rest_b[..open_b].trim().is_empty() {
            return s;
        }
        let Some(b) = balanced_braces(&s, a_end + open_b) else {
            return s;
        };
        let b_end = a_end + open_b + b.len() + 2;
        let replacement = format!("{}/{}", a, b);
        s = format!("{}{}{}", &s[..pos], replacement, &s[b_end..]);
    }
}

/// Rewrite `\sqrt{N}` to `sqrt(N)`, innermost-out.
fn rewrite_sqrt(mut s: String) -> String {
    loop {
        let Some(pos) = s.rfind("\\sqrt") else {
            return s;
        };
        let after = pos + "\\sqrt".len();
        let rest = &s[after..];
        let Some(open) = rest.find('{') else {
            return s;
        };
        if !rest[..open].trim().is_empty() {
            return s;
        }
        let Some(inner) = balanced_braces(&s, after + open) else {
            return s;
        };
        let end = after + open + inner.len() + 2;
        let replacement = format!("sqrt({})", inner);
        s = format!("{}{}{}", &s[..pos], replacement, &s[end..]);
    }
}

fn strip_outer_math_delimiters(s: &str) -> &str {
    let t = s.trim();
    for (open, close) in [("$", "$"), ("\\(", "\\)"), ("\\[", "\\]")] {
        if t.len() > open.len() + close.len() && t.starts_with(open) && t.ends_with(close) {
            let inner = &t[open.len()..t.len() - close.len()];
            // "$a$ and $b$" must not lose its delimiters.
            if open != "$" || !inner.contains('$') {
                return inner.trim();
            }
        }
    }
    t
}

fn strip_currency_percent_units(raw: &str) -> String {
    let mut s = raw.trim().to_string();
    loop {
        let before = s.len();
        s = s.trim().to_string();
        for p in ["\\$", "$", "€", "£"] {
            if let Some(rest) = s.strip_prefix(p) {
                s = rest.to_string();
            }
        }
        for suf in ["\\%", "%", "\\$", "$", "."] {
            if let Some(rest) = s.strip_suffix(suf) {
                s = rest.to_string();
            }
        }
        if s.len() == before {
            break;
        }
    }
    if let Some(caps) = UNIT_TAIL_RE.captures(&s) {
        s = caps[1].to_string();
    }
    s
}

fn parse_decimal(sign: &str, int_part: &str, frac_part: &str) -> BigRational {
    let digits = format!(
        "{}{}{}",
        sign,
        if int_part.is_empty() { "0" } else { int_part },
        frac_part
    );
    let numer: BigInt = digits.parse().expect("digits parse");
    let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
    BigRational::new(numer, denom)
}

/// Normalize a raw answer span into a [`CanonicalAnswer`]. Total: anything
/// that fails numeric parsing becomes normalized text.
pub fn normalize(raw: &str) -> CanonicalAnswer {
    let s = strip_outer_math_delimiters(raw);
    let s = strip_currency_percent_units(s);
    let s = LATEX_SPACING_RE.replace_all(&s, "").to_string();
    let s = TEXT_CMD_RE.replace_all(&s, "$1").to_string();
    let s = s.replace("\\left", "").replace("\\right", "");
    let s = rewrite_frac(s);
    let s = rewrite_sqrt(s);
    let s = s.replace("\\pi", "pi");
    let s = strip_currency_percent_units(&s);

    let compact = if THOUSANDS_RE.is_match(&s) {
        s.replace(',', "")
    } else {
        s.clone()
    };

    if INT_RE.is_match(&compact) {
        let n: BigInt = compact.parse().expect("int parse");
        let value = BigRational::from_integer(n);
        let text = value.to_string();
        return CanonicalAnswer {
            kind: AnswerKind::Rational,
            value: Some(value),
            text,
        };
    }
    if let Some(caps) = FRACTION_RE.captures(&compact) {
        let numer: BigInt = caps[1].parse().expect("numer parse");
        let denom: BigInt = caps[2].parse().expect("denom parse");
        if !denom.is_zero() {
            let value = BigRational::new(numer, denom);
            let text = if value.denom().is_one() {
                value.numer().to_string()
            } else {
                format!("{}/{}", value.numer(), value.denom())
            };
            return CanonicalAnswer {
                kind: AnswerKind::Rational,
                value: Some(value),
                text,
            };
        }
    }
    if let Some(caps) = DECIMAL_RE.captures(&compact) {
        let value = parse_decimal(&caps[1], &caps[2], &caps[3]);
        return CanonicalAnswer {
            kind: AnswerKind::Decimal,
            value: Some(value),
            text: compact,
        };
    }

    let text = compact
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    let text = if text.is_empty() {
        raw.trim().to_lowercase()
    } else {
        text
    };
    CanonicalAnswer {
        kind: AnswerKind::NormalizedText,
        value: None,
        text,
    }
}

/// Exact equivalence. Numeric kinds compare by rational value (so `6/5`
/// equals `1.2`); text compares by normalized string equality; a numeric
/// never equals a text.
pub fn is_equivalent(a: &CanonicalAnswer, b: &CanonicalAnswer) -> bool {
    match (&a.value, &b.value) {
        (Some(x), Some(y)) => x == y,
        (None, None) => a.text == b.text,
        _ => false,
    }
}

/// Pass@1 verdict for one trace against a gold answer. Total: traces with
/// no extractable answer grade false.
pub fn grade(trace: &str, gold_answer_raw: &str) -> bool {
    match extract_final_answer(trace) {
        Ok(span) => is_equivalent(&normalize(&span), &normalize(gold_answer_raw)),
        Err(_) => false,
    }
}

/// Grade many (trace, gold) pairs.
pub fn grade_batch(pairs: &[(String, String)]) -> Vec<bool> {
    #[cfg(feature = "parallel")]
    {
        grade_batch_par(pairs)
    }
    #[cfg(not(feature = "parallel"))]
    {
        grade_batch_seq(pairs)
    }
}

pub fn grade_batch_seq(pairs: &[(String, String)]) -> Vec<bool> {
    pairs.iter().map(|(t, g)| grade(t, g)).collect()
}

#[cfg(feature = "parallel")]
pub fn grade_batch_par(pairs: &[(String, String)]) -> Vec<bool> {
    use rayon::prelude::*;
    pairs.par_iter().map(|(t, g)| grade(t, g)).collect()
}
