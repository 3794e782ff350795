//! Activation storage: on-disk dump format, token selection, and per-head
//! feature aggregation.

pub mod dump;
pub mod features;
pub mod select;

pub use dump::{
    read_dump, write_dump, ActivationDump, DumpManifest, SampleActivations, SampleIndexEntry,
    TokenActivations, DTYPE, SCHEMA_VERSION,
};
pub use features::{
    aggregate_features, modality_attention_profile, FeatureStore, HeadFeature,
};
pub use select::{
    normalize_token, select_token_indices, split_answer_tokens, OfflineScorer, TokenSelection,
    TokenSelector,
};
