//! Causal interventions on attention heads: masking, patching, steering,
//! and random-baseline selection.

pub mod bank;
pub mod baseline;
pub mod direction;
pub mod spec;

pub use bank::{default_patch_source, PatchBank};
pub use baseline::{jaccard, select_random_baseline};
pub use direction::{apply_steering, compute_direction, SteeringDirection};
pub use spec::{
    InterventionSpec, InterventionStack, PositionRole, DEFAULT_MASK_EPSILON, DEFAULT_STEER_ALPHA,
};
