//! Text-similarity metrics: bag-of-words cosine, Jaccard distance over
//! token sets, and character-level Levenshtein distance.
//!
//! Cosine uses plain term-frequency vectors over lowercased alphanumeric
//! tokens, not embeddings, so the values are reproducible offline.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTriple {
    pub cosine: f64,
    pub jaccard_distance: f64,
    pub levenshtein_distance: usize,
}

/// Lowercased alphanumeric tokens: splits on whitespace and punctuation.
fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Sorted term frequencies, so sums accumulate in a canonical order and
/// identical inputs produce bit-identical vectors.
fn term_frequencies(toks: &[String]) -> BTreeMap<&str, f64> {
    let mut tf: BTreeMap<&str, f64> = BTreeMap::new();
    for t in toks {
        *tf.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    tf
}

pub fn cosine(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    let fa = term_frequencies(&ta);
    let fb = term_frequencies(&tb);
    let dot: f64 = fa
        .iter()
        .map(|(t, x)| x * fb.get(t).copied().unwrap_or(0.0))
        .sum();
    let sa: f64 = fa.values().map(|x| x * x).sum();
    let sb: f64 = fb.values().map(|x| x * x).sum();
    if sa == 0.0 || sb == 0.0 {
        return 0.0;
    }
    // sqrt of the product (not a product of sqrts) so equal vectors give
    // exactly 1.0 under IEEE-754 rounding.
    dot / (sa * sb).sqrt()
}

pub fn jaccard_distance(a: &str, b: &str) -> f64 {
    let sa: HashSet<String> = tokens(a).into_iter().collect();
    let sb: HashSet<String> = tokens(b).into_iter().collect();
    if sa.is_empty() && sb.is_empty() {
        return 0.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    1.0 - inter / union
}

/// Character-level edit distance, two-row dynamic programming.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr: Vec<usize> = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            curr[j + 1] = (prev[j + 1] + 1).min(curr[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// All three metrics for one pair.
pub fn similarity(a: &str, b: &str) -> SimilarityTriple {
    SimilarityTriple {
        cosine: cosine(a, b),
        jaccard_distance: jaccard_distance(a, b),
        levenshtein_distance: levenshtein(a, b),
    }
}

/// Metrics for many pairs.
pub fn similarity_batch(pairs: &[(String, String)]) -> Vec<SimilarityTriple> {
    #[cfg(feature = "parallel")]
    {
        similarity_batch_par(pairs)
    }
    #[cfg(not(feature = "parallel"))]
    {
        similarity_batch_seq(pairs)
    }
}

pub fn similarity_batch_seq(pairs: &[(String, String)]) -> Vec<SimilarityTriple> {
    pairs.iter().map(|(a, b)| similarity(a, b)).collect()
}

#[cfg(feature = "parallel")]
pub fn similarity_batch_par(pairs: &[(String, String)]) -> Vec<SimilarityTriple> {
    use rayon::prelude::*;
    pairs.par_iter().map(|(a, b)| similarity(a, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_row() {
        let t = similarity("Compute (2^3)(5^5) in your head.", "Compute (2^3)(5^5) in your head.");
        assert_eq!(t.cosine, 1.0);
        assert_eq!(t.jaccard_distance, 0.0);
        assert_eq!(t.levenshtein_distance, 0);
    }

    #[test]
    fn kitten_sitting() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn disjoint_vocabulary() {
        let t = similarity("alpha beta", "gamma delta");
        assert_eq!(t.cosine, 0.0);
        assert_eq!(t.jaccard_distance, 1.0);
    }

    #[test]
    fn symmetric() {
        let a = "A football team played 22 games.";
        let b = "A basketball team played 30 games total.";
        let ab = similarity(a, b);
        let ba = similarity(b, a);
        assert_eq!(ab.cosine, ba.cosine);
        assert_eq!(ab.jaccard_distance, ba.jaccard_distance);
        assert_eq!(ab.levenshtein_distance, ba.levenshtein_distance);
    }

    #[test]
    fn empty_vs_nonempty_edit_distance() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
    }

    #[test]
    fn batch_matches_single() {
        let pairs = vec![
            ("kitten".to_string(), "sitting".to_string()),
            ("same".to_string(), "same".to_string()),
        ];
        let batch = similarity_batch(&pairs);
        assert_eq!(batch[0].levenshtein_distance, 3);
        assert_eq!(batch[1].levenshtein_distance, 0);
        assert_eq!(similarity_batch_seq(&pairs), batch);
    }
}
