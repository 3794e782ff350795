//! Deterministic seed derivation.
//!
//! Every randomized step derives its RNG seed from the run's global seed
//! plus the coordinates of the job (layer, head, function, sample number,
//! ...). Derivation uses splitmix64 — stable across platforms and compiler
//! versions, unlike `DefaultHasher` — so results never depend on execution
//! order or thread scheduling.

use crate::types::{CognitiveFunction, HeadId};

/// One splitmix64 step: mixes `state + part` into a well-distributed word.
fn splitmix64(state: u64, part: u64) -> u64 {
    let mut z = state.wrapping_add(part).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold an ordered list of parts into one seed.
pub fn stable_seed(parts: &[u64]) -> u64 {
    let mut state = 0x5185_2f4a_04c1_39d1;
    for &part in parts {
        state = splitmix64(state, part);
    }
    state
}

/// Seed for one (head, function) probe-training job.
pub fn probe_seed(global_seed: u64, head: HeadId, function: CognitiveFunction) -> u64 {
    stable_seed(&[global_seed, head.layer as u64, head.head as u64, function.index() as u64])
}
