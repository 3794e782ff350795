//! Text-overlap metrics and the integrated accuracy rule.
//!
//! An intervened answer counts as unaffected when BLEU exceeds 0.8, ROUGE-L
//! F1 exceeds 0.6, or semantic similarity exceeds 0.6. BLEU is
//! sentence-level over 1–4-gram modified precisions with add-one smoothing
//! on zero counts; ROUGE is the longest-common-subsequence F1. Tokenization
//! is pinned (lowercase, split on whitespace and punctuation) so scores are
//! reproducible to the bit.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::semantic::Embedder;

/// Lowercase and split on anything that is not alphanumeric.
pub fn metric_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

// ============================================================================
// BLEU
// ============================================================================

/// Sentence-level BLEU of `candidate` against one `reference`.
///
/// Geometric mean of modified n-gram precisions for n = 1..=min(4, |c|),
/// each clipped by reference counts; a zero match count smooths to
/// (m+1)/(t+1). Multiplied by the brevity penalty exp(1 − r/c) when the
/// candidate is shorter than the reference.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let c = metric_tokens(candidate);
    let r = metric_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return if c.is_empty() && r.is_empty() { 1.0 } else { 0.0 };
    }
    let max_order = c.len().min(4);
    let mut log_sum = 0.0;
    for order in 1..=max_order {
        let candidate_grams = ngram_counts(&c, order);
        let reference_grams = ngram_counts(&r, order);
        let total: usize = candidate_grams.values().sum();
        let matched: usize = candidate_grams
            .iter()
            .map(|(gram, &count)| count.min(reference_grams.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if matched == 0 {
            (matched + 1) as f64 / (total + 1) as f64
        } else {
            matched as f64 / total as f64
        };
        log_sum += precision.ln();
    }
    let geometric_mean = (log_sum / max_order as f64).exp();
    let brevity = if c.len() >= r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    geometric_mean * brevity
}

fn ngram_counts(tokens: &[String], order: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= order {
        for gram in tokens.windows(order) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

// ============================================================================
// ROUGE-L
// ============================================================================

/// ROUGE-L F1: harmonic mean of LCS precision and recall over word tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = metric_tokens(candidate);
    let r = metric_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return if c.is_empty() && r.is_empty() { 1.0 } else { 0.0 };
    }
    let lcs = lcs_length(&c, &r) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / c.len() as f64;
    let recall = lcs / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Classic O(|a|·|b|) dynamic program for the LCS length.
pub fn lcs_length(a: &[String], b: &[String]) -> usize {
    let mut previous = vec![0usize; b.len() + 1];
    let mut current = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            current[j + 1] =
                if x == y { previous[j] + 1 } else { previous[j + 1].max(current[j]) };
        }
        std::mem::swap(&mut previous, &mut current);
    }
    previous[b.len()]
}

// ============================================================================
// Integrated accuracy
// ============================================================================

/// Scores for one (candidate, reference) answer pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricScores {
    pub bleu: f64,
    pub rouge_l_f1: f64,
    pub semantic_sim: f64,
    pub unaffected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_verdict: Option<bool>,
}

/// The unaffected disjunction, kept as a free function so the threshold
/// logic is testable in isolation.
pub fn unaffected_rule(bleu: f64, rouge_l_f1: f64, semantic_sim: f64) -> bool {
    bleu > 0.8 || rouge_l_f1 > 0.6 || semantic_sim > 0.6
}

impl MetricScores {
    pub fn compute(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<Self> {
        let bleu_score = bleu(candidate, reference);
        let rouge = rouge_l(candidate, reference);
        let semantic = crate::eval::semantic::semantic_similarity(candidate, reference, embedder)?;
        Ok(MetricScores {
            bleu: bleu_score,
            rouge_l_f1: rouge,
            semantic_sim: semantic,
            unaffected: unaffected_rule(bleu_score, rouge, semantic),
            judge_verdict: None,
        })
    }
}

/// Fraction of pairs whose answers are unaffected under the threshold rule.
pub fn integrated_accuracy(
    pairs: &[(String, String)],
    embedder: &dyn Embedder,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut unaffected = 0usize;
    for (candidate, reference) in pairs {
        if MetricScores::compute(candidate, reference, embedder)?.unaffected {
            unaffected += 1;
        }
    }
    Ok(unaffected as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::semantic::OfflineEmbedder;
    use proptest::prelude::*;

    #[test]
    fn identical_strings_score_one() {
        for text in ["a cat", "The glaze, on the chicken!", "one two three four five"] {
            assert_eq!(bleu(text, text), 1.0, "{text}");
            assert_eq!(rouge_l(text, text), 1.0, "{text}");
        }
    }

    #[test]
    fn truncated_candidate_matches_hand_computed_bleu() {
        // "the cat sat" vs "the cat sat down": unigram 3/3, bigram 2/2,
        // trigram 1/1 (4-grams skipped: the candidate has none), so the
        // geometric mean is 1 and only the brevity penalty remains:
        // exp(1 - 4/3) = exp(-1/3).
        let got = bleu("the cat sat", "the cat sat down");
        let expected = (-1.0f64 / 3.0).exp();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn disjoint_vocabulary_stays_under_a_tenth() {
        // Long enough that the add-one smoothing floor sits below 0.1.
        let candidate = "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu";
        let reference = "one two three four five six seven eight nine ten eleven twelve";
        let score = bleu(candidate, reference);
        assert!(score < 0.1, "{score}");
        assert!(score > 0.0, "{score}");
        assert_eq!(rouge_l(candidate, reference), 0.0);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        assert_eq!(bleu("", "a cat"), 0.0);
        assert_eq!(rouge_l("", "a cat"), 0.0);
        assert_eq!(rouge_l("a cat", ""), 0.0);
    }

    #[test]
    fn rouge_matches_hand_computed_lcs_case() {
        // "a b c d" vs "a x c": LCS = {a, c} = 2; P = 2/4, R = 2/3,
        // F1 = 2·(1/2)(2/3) / (1/2 + 2/3) = 4/7.
        let got = rouge_l("a b c d", "a x c");
        assert!((got - 4.0 / 7.0).abs() < 1e-12, "{got}");
    }

    /// Every subsequence of `a`, checked against `b` — exponential, only
    /// for oracle duty on short inputs.
    fn brute_force_lcs(a: &[String], b: &[String]) -> usize {
        let is_subsequence = |needle: &[&String], hay: &[String]| {
            let mut it = hay.iter();
            needle.iter().all(|n| it.by_ref().any(|h| h == *n))
        };
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let subset: Vec<&String> =
                a.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, t)| t).collect();
            if subset.len() > best && is_subsequence(&subset, b) {
                best = subset.len();
            }
        }
        best
    }

    proptest! {
        #[test]
        fn lcs_dynamic_program_matches_brute_force(
            a in proptest::collection::vec("[abc]", 0..8),
            b in proptest::collection::vec("[abc]", 0..8),
        ) {
            prop_assert_eq!(lcs_length(&a, &b), brute_force_lcs(&a, &b));
        }

        #[test]
        fn bleu_is_one_exactly_on_equal_token_sequences(
            a in proptest::collection::vec("[ab]{1,2}", 1..6),
            b in proptest::collection::vec("[ab]{1,2}", 1..6),
        ) {
            let (ca, cb) = (a.join(" "), b.join(" "));
            let score = bleu(&ca, &cb);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&score));
            if a == b {
                prop_assert_eq!(score, 1.0);
            } else {
                prop_assert!(score < 1.0, "{} vs {} scored {}", ca, cb, score);
            }
            let rouge = rouge_l(&ca, &cb);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&rouge));
            prop_assert_eq!(rouge == 1.0, a == b);
        }
    }

    #[test]
    fn unaffected_rule_covers_all_corners() {
        // One value per side of each threshold; enumerate the 8 corners of
        // (bleu, rouge, semantic) and compare against the plain disjunction.
        let bleu_sides = [(0.85, true), (0.75, false)];
        let rouge_sides = [(0.65, true), (0.55, false)];
        let sem_sides = [(0.65, true), (0.55, false)];
        for (b, b_hit) in bleu_sides {
            for (r, r_hit) in rouge_sides {
                for (s, s_hit) in sem_sides {
                    assert_eq!(
                        unaffected_rule(b, r, s),
                        b_hit || r_hit || s_hit,
                        "corner ({b}, {r}, {s})"
                    );
                }
            }
        }
        // Thresholds are strict.
        assert!(!unaffected_rule(0.8, 0.6, 0.6));
    }

    #[test]
    fn integrated_accuracy_averages_the_indicator() {
        let corpus = ["the cat sat on the mat", "dogs chase red balls"];
        let embedder = OfflineEmbedder::from_corpus(corpus.iter().copied());
        let pairs = vec![
            ("the cat sat on the mat".to_string(), "the cat sat on the mat".to_string()),
            ("entirely unrelated words here".to_string(), "dogs chase red balls".to_string()),
        ];
        let accuracy = integrated_accuracy(&pairs, &embedder).unwrap();
        assert_eq!(accuracy, 0.5);
        let identical: Vec<(String, String)> =
            pairs.iter().map(|(_, r)| (r.clone(), r.clone())).collect();
        assert_eq!(integrated_accuracy(&identical, &embedder).unwrap(), 1.0);
        let disjoint = vec![pairs[1].clone()];
        assert_eq!(integrated_accuracy(&disjoint, &embedder).unwrap(), 0.0);
    }
}
