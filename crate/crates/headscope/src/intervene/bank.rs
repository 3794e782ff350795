//! Donor activations for patching.
//!
//! The bank groups per-head activations by the function whose samples
//! produced them, keeping both the raw pool (for random draws) and the
//! arithmetic mean (for mean patching).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{CognitiveFunction, HeadId};

/// Per-(function, head) activation pools and their means.
#[derive(Debug, Clone)]
pub struct PatchBank {
    head_dim: usize,
    pools: BTreeMap<(CognitiveFunction, HeadId), Vec<Vec<f32>>>,
    means: BTreeMap<(CognitiveFunction, HeadId), Vec<f32>>,
}

impl PatchBank {
    pub fn new(head_dim: usize) -> PatchBank {
        PatchBank { head_dim, pools: BTreeMap::new(), means: BTreeMap::new() }
    }

    /// Add one sample's activation for `head` under `function`. The mean is
    /// maintained incrementally in f64 to keep it exact to summation order.
    pub fn add(
        &mut self,
        function: CognitiveFunction,
        head: HeadId,
        activation: Vec<f32>,
    ) -> Result<()> {
        if activation.len() != self.head_dim {
            return Err(Error::Intervention(format!(
                "activation length {} does not match bank head_dim {}",
                activation.len(),
                self.head_dim
            )));
        }
        if activation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Intervention("non-finite activation offered to bank".into()));
        }
        self.pools.entry((function, head)).or_default().push(activation);
        Ok(())
    }

    /// Recompute all means from the pools. Call after the last `add`.
    pub fn finalize(&mut self) {
        self.means.clear();
        for ((function, head), pool) in &self.pools {
            let mut sums = vec![0.0f64; self.head_dim];
            for activation in pool {
                for (sum, v) in sums.iter_mut().zip(activation) {
                    *sum += *v as f64;
                }
            }
            let n = pool.len() as f64;
            self.means.insert(
                (*function, *head),
                sums.into_iter().map(|s| (s / n) as f32).collect(),
            );
        }
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn pool(&self, function: CognitiveFunction, head: HeadId) -> Result<&[Vec<f32>]> {
        self.pools
            .get(&(function, head))
            .map(|p| p.as_slice())
            .filter(|p| !p.is_empty())
            .ok_or_else(|| {
                Error::Intervention(format!("patch bank has no pool for ({function}, {head})"))
            })
    }

    pub fn mean(&self, function: CognitiveFunction, head: HeadId) -> Result<&[f32]> {
        self.means.get(&(function, head)).map(|m| m.as_slice()).ok_or_else(|| {
            Error::Intervention(format!(
                "patch bank has no mean for ({function}, {head}); was finalize() called?"
            ))
        })
    }

    /// Functions that currently have at least one pool.
    pub fn functions(&self) -> Vec<CognitiveFunction> {
        let mut out: Vec<CognitiveFunction> =
            self.pools.keys().map(|(f, _)| *f).collect();
        out.dedup();
        out
    }
}

/// Default donor function for each function under test. The pairing sends
/// each function to a dissimilar one (vision to decision, math to vision
/// recall, ...), so patched activations are maximally off-distribution.
pub fn default_patch_source(target: CognitiveFunction) -> CognitiveFunction {
    use CognitiveFunction::*;
    match target {
        VisionKnowledgeRecall => DecisionMaking,
        LanguageKnowledgeRecall => HighLevelVisual,
        LanguageInfoExtraction => HighLevelVisual,
        MathReasoning => VisionKnowledgeRecall,
        LowLevelVisual => Inference,
        Inference => VisionKnowledgeRecall,
        HighLevelVisual => LanguageInfoExtraction,
        DecisionMaking => VisionKnowledgeRecall,
    }
}
