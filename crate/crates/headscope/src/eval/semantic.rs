//! Semantic similarity between answers: cosine over pluggable embeddings.
//!
//! The default embedder is fully offline — an L2-normalized bag of words
//! with corpus IDF weights — so the whole evaluation stack runs without a
//! network. A remote embedding service can be swapped in through the same
//! trait.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::metric_tokens;
use crate::http::{post_json, Endpoint};

/// Anything that can turn a text into a vector.
pub trait Embedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Cosine similarity of the two embeddings.
///
/// Zero-vector edge cases are pinned: two empty/zero embeddings count as
/// identical (1.0); one zero side counts as unrelated (0.0).
pub fn semantic_similarity(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<f64> {
    let a = embedder.embed(candidate)?;
    let b = embedder.embed(reference)?;
    if a.len() != b.len() {
        return Err(Error::Evaluation(format!(
            "embedder returned mismatched dimensions: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let norm_a = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_a == 0.0 && norm_b == 0.0 {
        return Ok(1.0);
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok((dot / (norm_a * norm_b)).clamp(-1.0, 1.0))
}

// ============================================================================
// Offline embedder
// ============================================================================

/// Bag-of-words embedding with smoothed IDF weights learned from a corpus.
/// Out-of-corpus words get the maximum weight (document frequency zero).
#[derive(Debug, Clone, Default)]
pub struct OfflineEmbedder {
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    n_documents: usize,
}

impl OfflineEmbedder {
    pub fn from_corpus<'a>(documents: impl IntoIterator<Item = &'a str>) -> OfflineEmbedder {
        let mut document_frequency: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_documents = 0usize;
        for document in documents {
            n_documents += 1;
            let mut seen = std::collections::BTreeSet::new();
            for token in metric_tokens(document) {
                if seen.insert(token.clone()) {
                    *document_frequency.entry(token).or_insert(0) += 1;
                }
            }
        }
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::with_capacity(document_frequency.len());
        for (index, (token, df)) in document_frequency.into_iter().enumerate() {
            vocabulary.insert(token, index);
            idf.push(Self::idf_weight(n_documents, df));
        }
        OfflineEmbedder { vocabulary, idf, n_documents }
    }

    fn idf_weight(n_documents: usize, document_frequency: usize) -> f64 {
        (((1 + n_documents) as f64) / ((1 + document_frequency) as f64)).ln() + 1.0
    }

    /// Weight applied to one token; unknown tokens use df = 0.
    pub fn weight(&self, token: &str) -> f64 {
        match self.vocabulary.get(token) {
            Some(&index) => self.idf[index],
            None => Self::idf_weight(self.n_documents, 0),
        }
    }
}

/// Fixed-width band of dimensions reserved for out-of-corpus words.
const UNKNOWN_SLOTS: usize = 256;

impl OfflineEmbedder {
    /// Stable slot for a word the corpus never saw. Hash-based so the same
    /// word lands in the same dimension regardless of which text it is in;
    /// distinct words can collide but the band is wide relative to any
    /// single answer.
    fn unknown_slot(token: &str) -> usize {
        let mut state = 0xcbf2_9ce4_8422_2325u64; // FNV-1a offset basis
        for byte in token.bytes() {
            state ^= byte as u64;
            state = state.wrapping_mul(0x1000_0000_01b3);
        }
        (state % UNKNOWN_SLOTS as u64) as usize
    }
}

impl Embedder for OfflineEmbedder {
    /// Dimensions 0..V are corpus vocabulary counts × IDF; the final
    /// fixed-width band holds hashed out-of-corpus words, so two texts
    /// always embed into the same space.
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = metric_tokens(text);
        let v = self.vocabulary.len();
        let mut vector = vec![0.0f64; v + UNKNOWN_SLOTS];
        for token in tokens {
            match self.vocabulary.get(&token) {
                Some(&index) => vector[index] += self.idf[index],
                None => vector[v + Self::unknown_slot(&token)] += self.weight(&token),
            }
        }
        let norm = vector.iter().map(|value| value * value).sum::<f64>().sqrt();
        if norm > 0.0 {
            for value in vector.iter_mut() {
                *value /= norm;
            }
        }
        Ok(vector)
    }
}

// ============================================================================
// Remote embedder
// ============================================================================

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Client for an HTTP embedding service: POST {texts} → {embeddings}.
pub struct RemoteEmbedder {
    pub endpoint: Endpoint,
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let response: EmbedResponse =
            post_json(&self.endpoint, &EmbedRequest { texts: vec![text] })?;
        response
            .embeddings
            .into_iter()
            .next()
            .ok_or_else(|| Error::Endpoint("embedding service returned no vectors".into()))
    }
}
