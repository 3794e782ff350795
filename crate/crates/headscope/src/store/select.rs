//! Choosing which answer tokens feed the per-head features.
//!
//! Two selectors share one contract: return `min(k, N)` distinct token
//! indices for an `N`-token answer. The remote selector asks an external
//! service to name the most important tokens; the offline selector ranks
//! content words by inverse corpus frequency and is the default (and the
//! safety net when the service fails).

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::{post_json, Endpoint};

/// Words the offline scorer treats as carrying no content.
const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "cannot", "could", "did", "do", "does", "doing", "down", "during", "each",
    "else", "few", "for", "from", "further", "had", "has", "have", "having", "he", "her", "here",
    "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "me",
    "might", "more", "most", "must", "my", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "out", "over", "own", "same", "she", "should", "so", "some",
    "such", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this",
    "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what",
    "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you",
    "your",
];

/// Split an answer into whitespace-delimited word tokens.
pub fn split_answer_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Lowercase and trim non-alphanumeric characters from both ends, so
/// "Texture," matches "texture" while "10,000" keeps its inner comma.
pub fn normalize_token(token: &str) -> String {
    token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Result of token selection for one answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSelection {
    /// Distinct, ascending indices into the answer's word tokens.
    pub indices: Vec<usize>,
    /// True when the remote selector failed and the offline ranking was
    /// used instead.
    pub used_fallback: bool,
}

// ============================================================================
// Offline scorer
// ============================================================================

/// Content-word scorer: stopwords and bare punctuation score zero, the rest
/// score by inverse frequency in the ingested answer corpus (rarer is
/// higher). Unknown words count as frequency one.
#[derive(Debug, Clone, Default)]
pub struct OfflineScorer {
    corpus_counts: BTreeMap<String, u64>,
}

impl OfflineScorer {
    pub fn from_corpus<'a>(answers: impl IntoIterator<Item = &'a str>) -> OfflineScorer {
        let mut corpus_counts = BTreeMap::new();
        for answer in answers {
            for token in answer.split_whitespace() {
                let normalized = normalize_token(token);
                if !normalized.is_empty() {
                    *corpus_counts.entry(normalized).or_insert(0) += 1;
                }
            }
        }
        OfflineScorer { corpus_counts }
    }

    fn score(&self, token: &str) -> f64 {
        let normalized = normalize_token(token);
        if normalized.is_empty() || STOPWORDS.contains(&normalized.as_str()) {
            return 0.0;
        }
        1.0 / self.corpus_counts.get(&normalized).copied().unwrap_or(1).max(1) as f64
    }

    /// Indices of the `k` highest-scoring tokens; ties go to the earlier
    /// position, and zero-scoring tokens fill in only once content words
    /// run out (so `k >= N` returns every index).
    fn rank(&self, answer_tokens: &[String], k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..answer_tokens.len()).collect();
        order.sort_by(|&a, &b| {
            let (sa, sb) = (self.score(&answer_tokens[a]), self.score(&answer_tokens[b]));
            sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
        });
        let mut chosen: Vec<usize> = order.into_iter().take(k.min(answer_tokens.len())).collect();
        chosen.sort_unstable();
        chosen
    }
}

// ============================================================================
// Selectors
// ============================================================================

#[derive(Serialize)]
struct SelectRequest<'a> {
    answer_text: &'a str,
    k: usize,
}

#[derive(Deserialize)]
struct SelectResponse {
    tokens: Vec<String>,
}

/// How token selection is performed.
pub enum TokenSelector {
    /// Rank by the offline content-word scorer only.
    Offline(OfflineScorer),
    /// Ask a remote service to name the important tokens; fall back to the
    /// offline scorer when the call fails.
    Remote { endpoint: Endpoint, fallback: OfflineScorer },
}

/// Pick the indices of the `min(k, N)` most important answer tokens.
pub fn select_token_indices(
    answer_tokens: &[String],
    k: usize,
    selector: &TokenSelector,
) -> Result<TokenSelection> {
    if k == 0 {
        return Err(Error::Store("token selection requires k >= 1".into()));
    }
    if answer_tokens.is_empty() {
        return Err(Error::Store("token selection requires a nonempty answer".into()));
    }
    match selector {
        TokenSelector::Offline(scorer) => {
            Ok(TokenSelection { indices: scorer.rank(answer_tokens, k), used_fallback: false })
        }
        TokenSelector::Remote { endpoint, fallback } => {
            let answer_text = answer_tokens.join(" ");
            match post_json::<_, SelectResponse>(
                endpoint,
                &SelectRequest { answer_text: &answer_text, k },
            ) {
                Ok(response) => Ok(TokenSelection {
                    indices: resolve_named_tokens(answer_tokens, &response.tokens, k, fallback),
                    used_fallback: false,
                }),
                Err(_) => Ok(TokenSelection {
                    indices: fallback.rank(answer_tokens, k),
                    used_fallback: true,
                }),
            }
        }
    }
}

/// Map service-named tokens back to answer indices: each name claims its
/// earliest unclaimed occurrence (after normalization). Names that match
/// nothing are dropped; if fewer than `min(k, N)` indices result, the
/// offline ranking tops the set up so the selection contract still holds.
fn resolve_named_tokens(
    answer_tokens: &[String],
    named: &[String],
    k: usize,
    fallback: &OfflineScorer,
) -> Vec<usize> {
    let normalized: Vec<String> = answer_tokens.iter().map(|t| normalize_token(t)).collect();
    let want = k.min(answer_tokens.len());
    let mut taken: BTreeSet<usize> = BTreeSet::new();
    for name in named.iter().take(want) {
        let target = normalize_token(name);
        if target.is_empty() {
            continue;
        }
        let found = normalized
            .iter()
            .enumerate()
            .find(|(i, t)| **t == target && !taken.contains(i))
            .map(|(i, _)| i);
        if let Some(idx) = found {
            taken.insert(idx);
        }
    }
    if taken.len() < want {
        for idx in fallback.rank(answer_tokens, answer_tokens.len()) {
            if taken.len() == want {
                break;
            }
            taken.insert(idx);
        }
    }
    taken.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing::{MockServer, Script};
    use proptest::prelude::*;

    fn offline(corpus: &[&str]) -> TokenSelector {
        TokenSelector::Offline(OfflineScorer::from_corpus(corpus.iter().copied()))
    }

    #[test]
    fn picks_only_content_word() {
        let tokens = split_answer_tokens("it is a cat");
        let selection = select_token_indices(&tokens, 1, &offline(&["it is a cat"])).unwrap();
        assert_eq!(selection.indices, vec![3]);
        assert!(!selection.used_fallback);
    }

    #[test]
    fn saturating_k_returns_every_index() {
        let tokens = split_answer_tokens("the quick brown fox");
        for k in [4usize, 5, 100] {
            let selection = select_token_indices(&tokens, k, &offline(&[])).unwrap();
            assert_eq!(selection.indices, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn rarer_corpus_words_win() {
        let corpus = ["common common common rare", "common sight"];
        let tokens = split_answer_tokens("common rare sight");
        // Frequencies: common 4, rare 1, sight 1 -> rare ties sight, rare is earlier.
        let selection = select_token_indices(&tokens, 1, &offline(&corpus)).unwrap();
        assert_eq!(selection.indices, vec![1]);
        let selection = select_token_indices(&tokens, 2, &offline(&corpus)).unwrap();
        assert_eq!(selection.indices, vec![1, 2]);
    }

    #[test]
    fn ties_break_to_earliest_position() {
        let tokens = split_answer_tokens("delta gamma");
        let selection = select_token_indices(&tokens, 1, &offline(&["delta gamma"])).unwrap();
        assert_eq!(selection.indices, vec![0]);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let tokens = split_answer_tokens("word");
        assert!(select_token_indices(&tokens, 0, &offline(&[])).is_err());
        assert!(select_token_indices(&[], 1, &offline(&[])).is_err());
    }

    #[test]
    fn remote_selector_maps_named_tokens_to_indices() {
        let answer = "The glaze on the chicken appears to be a light brown color with a \
                      glossy texture, suggesting it might be a sauce or marinade. The specific \
                      type of glaze cannot be determined from the image alone without more \
                      context.";
        let tokens = split_answer_tokens(answer);
        let server = MockServer::start(vec![Script::Json(
            r#"{"tokens": ["glaze", "light", "brown", "glossy", "texture"]}"#.into(),
        )]);
        let selector = TokenSelector::Remote {
            endpoint: Endpoint::new(server.url.clone()),
            fallback: OfflineScorer::from_corpus([answer]),
        };
        let selection = select_token_indices(&tokens, 5, &selector).unwrap();
        assert_eq!(selection.indices, vec![1, 9, 10, 14, 15]);
        assert!(!selection.used_fallback);
        let bodies = server.finish();
        assert!(bodies[0].contains("\"k\":5"), "{}", bodies[0]);
        assert!(bodies[0].contains("glossy texture,"), "{}", bodies[0]);
    }

    #[test]
    fn repeated_names_claim_distinct_occurrences() {
        let tokens = split_answer_tokens("red fish blue fish");
        let server = MockServer::start(vec![Script::Json(
            r#"{"tokens": ["fish", "fish"]}"#.into(),
        )]);
        let selector = TokenSelector::Remote {
            endpoint: Endpoint::new(server.url.clone()),
            fallback: OfflineScorer::default(),
        };
        let selection = select_token_indices(&tokens, 2, &selector).unwrap();
        assert_eq!(selection.indices, vec![1, 3]);
        server.finish();
    }

    #[test]
    fn unmatched_names_topped_up_from_offline_ranking() {
        let tokens = split_answer_tokens("it is a cat");
        let server = MockServer::start(vec![Script::Json(
            r#"{"tokens": ["dog", "cat"]}"#.into(),
        )]);
        let selector = TokenSelector::Remote {
            endpoint: Endpoint::new(server.url.clone()),
            fallback: OfflineScorer::from_corpus(["it is a cat"]),
        };
        let selection = select_token_indices(&tokens, 2, &selector).unwrap();
        // "cat" matches index 3; "dog" matches nothing, so the offline
        // ranking supplies one more index (all remaining are stopwords ->
        // earliest position wins).
        assert_eq!(selection.indices, vec![0, 3]);
        assert!(!selection.used_fallback);
        server.finish();
    }

    #[test]
    fn service_failure_falls_back_and_flags() {
        let server = MockServer::start(vec![Script::Status(500)]);
        let selector = TokenSelector::Remote {
            endpoint: Endpoint::new(server.url.clone()),
            fallback: OfflineScorer::from_corpus(["it is a cat"]),
        };
        let tokens = split_answer_tokens("it is a cat");
        let selection = select_token_indices(&tokens, 1, &selector).unwrap();
        assert_eq!(selection.indices, vec![3]);
        assert!(selection.used_fallback);
        server.finish();
    }

    proptest! {
        #[test]
        fn offline_selection_is_sorted_distinct_and_sized(
            words in proptest::collection::vec("[a-z]{1,6}", 1..20),
            k in 1usize..25,
        ) {
            let tokens: Vec<String> = words;
            let selector = offline(&[]);
            let selection = select_token_indices(&tokens, k, &selector).unwrap();
            prop_assert_eq!(selection.indices.len(), k.min(tokens.len()));
            let as_set: BTreeSet<usize> = selection.indices.iter().copied().collect();
            prop_assert_eq!(as_set.len(), selection.indices.len());
            let mut sorted = selection.indices.clone();
            sorted.sort_unstable();
            prop_assert_eq!(&sorted, &selection.indices);
            prop_assert!(selection.indices.iter().all(|&i| i < tokens.len()));
        }
    }
}
