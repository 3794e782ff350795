//! Intervention specifications and their application to head outputs.
//!
//! Three causal edits share one hook point (the per-head value output,
//! before the residual merge):
//!
//! * masking scales the output by a small ε at every forward position;
//! * patching replaces the output at generated-token positions with a
//!   donor activation from another function's bank;
//! * steering shifts the output by α·σ·dir at generated-token positions.
//!
//! ε = 1, patching a head with its own activation, and α = 0 are exact
//! no-ops, bit for bit — interventions must vanish cleanly or comparisons
//! against un-intervened runs mean nothing.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervene::bank::PatchBank;
use crate::intervene::direction::{apply_steering, SteeringDirection};
use crate::seeds::stable_seed;
use crate::types::{CognitiveFunction, HeadId, ModelGeometry};

pub const DEFAULT_MASK_EPSILON: f64 = 0.001;
pub const DEFAULT_STEER_ALPHA: f64 = 0.1;

fn default_epsilon() -> f64 {
    DEFAULT_MASK_EPSILON
}

fn default_alpha() -> f64 {
    DEFAULT_STEER_ALPHA
}

/// One causal edit over a set of heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterventionSpec {
    /// Scale the head output by `epsilon` at every forward position.
    Mask {
        heads: BTreeSet<HeadId>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    /// Replace the head output with a seeded random donor activation from
    /// `source_function`'s pool, one draw per generated-token position.
    PatchRandom {
        heads: BTreeSet<HeadId>,
        source_function: CognitiveFunction,
        #[serde(default)]
        seed: u64,
    },
    /// Replace the head output with `source_function`'s mean activation.
    PatchMean {
        heads: BTreeSet<HeadId>,
        source_function: CognitiveFunction,
    },
    /// Shift the head output along a precomputed direction: x += α·σ·dir.
    Steer {
        heads: BTreeSet<HeadId>,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

impl InterventionSpec {
    pub fn heads(&self) -> &BTreeSet<HeadId> {
        match self {
            InterventionSpec::Mask { heads, .. }
            | InterventionSpec::PatchRandom { heads, .. }
            | InterventionSpec::PatchMean { heads, .. }
            | InterventionSpec::Steer { heads, .. } => heads,
        }
    }

    /// Check internal consistency and fit to a geometry, plus the rule
    /// that a patch may not source from the function under test.
    pub fn validate(
        &self,
        geometry: ModelGeometry,
        target_function: Option<CognitiveFunction>,
    ) -> Result<()> {
        for &head in self.heads() {
            geometry.validate_head(head)?;
        }
        match self {
            InterventionSpec::Mask { epsilon, .. } => {
                if *epsilon < 0.0 || !epsilon.is_finite() {
                    return Err(Error::Intervention(format!(
                        "mask epsilon must be finite and >= 0, got {epsilon}"
                    )));
                }
            }
            InterventionSpec::PatchRandom { source_function, .. }
            | InterventionSpec::PatchMean { source_function, .. } => {
                if target_function == Some(*source_function) {
                    return Err(Error::Intervention(format!(
                        "patch source {source_function} must differ from the function under test"
                    )));
                }
            }
            InterventionSpec::Steer { alpha, .. } => {
                if !alpha.is_finite() {
                    return Err(Error::Intervention(format!(
                        "steer alpha must be finite, got {alpha}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Whether a forward position encodes the prompt or a generated token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionRole {
    Prompt,
    Generated,
}

/// Everything needed to apply interventions during a run: the ordered
/// specs, donor data, and a per-sample key making random draws independent
/// across samples yet reproducible.
pub struct InterventionStack<'a> {
    specs: Vec<&'a InterventionSpec>,
    patch_bank: Option<&'a PatchBank>,
    directions: Option<&'a BTreeMap<HeadId, SteeringDirection>>,
    sample_key: u64,
}

impl<'a> InterventionStack<'a> {
    pub fn new(specs: Vec<&'a InterventionSpec>) -> InterventionStack<'a> {
        InterventionStack { specs, patch_bank: None, directions: None, sample_key: 0 }
    }

    pub fn with_patch_bank(mut self, bank: &'a PatchBank) -> Self {
        self.patch_bank = Some(bank);
        self
    }

    pub fn with_directions(mut self, directions: &'a BTreeMap<HeadId, SteeringDirection>) -> Self {
        self.directions = Some(directions);
        self
    }

    pub fn with_sample_key(mut self, sample_key: u64) -> Self {
        self.sample_key = sample_key;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Earliest layer any spec touches; callers can skip diffing below it.
    pub fn first_layer(&self) -> Option<usize> {
        self.specs.iter().flat_map(|s| s.heads().iter().map(|h| h.layer)).min()
    }

    /// Edit one head's value output in place. `position` is the absolute
    /// sequence index; `role` says whether it belongs to the prompt or to
    /// generated text. Specs apply in stack order.
    pub fn apply(
        &self,
        head: HeadId,
        position: usize,
        role: PositionRole,
        output: &mut [f32],
    ) -> Result<()> {
        for spec in &self.specs {
            if !spec.heads().contains(&head) {
                continue;
            }
            match spec {
                InterventionSpec::Mask { epsilon, .. } => {
                    if *epsilon != 1.0 {
                        for v in output.iter_mut() {
                            *v = (*v as f64 * epsilon) as f32;
                        }
                    }
                }
                InterventionSpec::PatchRandom { source_function, seed, .. } => {
                    if role == PositionRole::Generated {
                        let bank = self.require_bank()?;
                        let pool = bank.pool(*source_function, head)?;
                        let draw = stable_seed(&[
                            *seed,
                            self.sample_key,
                            head.layer as u64,
                            head.head as u64,
                            position as u64,
                        ]) as usize
                            % pool.len();
                        output.copy_from_slice(&pool[draw]);
                    }
                }
                InterventionSpec::PatchMean { source_function, .. } => {
                    if role == PositionRole::Generated {
                        let bank = self.require_bank()?;
                        output.copy_from_slice(bank.mean(*source_function, head)?);
                    }
                }
                InterventionSpec::Steer { alpha, .. } => {
                    if role == PositionRole::Generated {
                        let direction = self
                            .directions
                            .and_then(|d| d.get(&head))
                            .ok_or_else(|| {
                                Error::Intervention(format!(
                                    "no steering direction prepared for head {head}"
                                ))
                            })?;
                        apply_steering(output, direction, *alpha);
                    }
                }
            }
        }
        Ok(())
    }

    fn require_bank(&self) -> Result<&PatchBank> {
        self.patch_bank.ok_or_else(|| {
            Error::Intervention("patch intervention requires a patch bank".into())
        })
    }
}
