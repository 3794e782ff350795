//! Locate function-specialized attention heads and test them causally.
//!
//! The pipeline has three stages, each usable on its own:
//!
//! 1. **Record** — run a model over balanced task suites and dump per-head
//!    activations at answer-relevant token positions ([`store`], [`desk`]).
//! 2. **Probe** — train one linear probe per (head, function) on the dumped
//!    features, rank heads per function, and render heatmaps ([`probe`],
//!    [`analysis`]).
//! 3. **Intervene** — causally test the ranked heads by masking their value
//!    vectors, patching activations from a cross-function bank, or steering
//!    along learned correctness directions, then score answers with offline
//!    metrics ([`intervene`], [`eval`]).
//!
//! [`exp`] wires the stages into reproducible experiment protocols (masking
//! sweeps, confusion matrices, chained-task hierarchy, steering,
//! sensitivity), each a pure function of its config that writes
//! byte-identical reports into content-addressed directories.
//!
//! Everything runs offline against the built-in [`desk`] model — a
//! deterministic miniature transformer whose specialized heads are planted
//! in closed form, so every stage has a ground-truth oracle. External
//! judge/embedder endpoints are optional and degrade to offline fallbacks.
//!
//! The `parallel` feature (default on) fans grid cells and task batches out
//! via rayon; disabling it yields a dependency-light sequential build with
//! identical outputs.

pub mod analysis;
pub mod desk;
pub mod error;
pub mod eval;
pub mod exp;
pub mod http;
pub mod intervene;
pub mod par;
pub mod probe;
pub mod seeds;
pub mod store;
pub mod types;

pub use error::{Error, Result};
pub use types::{CognitiveFunction, HeadId, ModelGeometry, SubQAFRecord};
