//! Deterministic miniature transformer with analytically planted heads.
//!
//! The desk model is the test bed for the whole toolkit: its attention
//! heads are written down in closed form so that exactly one head carries
//! each function's task signal.  Probing must recover those heads, masking
//! them must floor their function's accuracy, and patching or steering them
//! must behave according to the construction — all checkable without any
//! trained checkpoint.

pub mod model;
pub mod tasks;
pub mod vocab;

pub use model::{
    build_desk_model, chance_level, default_planted_map, task_family, DeskModel,
    DeskModelConfig, HeadRole, RunOptions, RunOutput, TaskFamily, WEAK_SCALE,
};
pub use tasks::{
    generate_task_suite, label_suite, labelled_accuracy, materialize_chain, prompt_text,
    write_suite, ChainRule, SuiteConfig, SuiteMeta, SyntheticTask, TaskSuite,
};
pub use vocab::{
    visual_positions, ChannelLayout, DeskVocab, TokenId, TokenInfo, TokenKind, EOS_NAME,
    NULL_NAME, PROMPT_LEN,
};
