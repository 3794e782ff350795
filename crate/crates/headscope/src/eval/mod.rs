//! Answer evaluation: overlap metrics, semantic similarity, the integrated
//! accuracy rule, and the external judge client.

pub mod judge;
pub mod metrics;
pub mod semantic;

pub use judge::{
    judge_batch, judge_one, tally_outcomes, JudgeConfig, JudgeOutcome, JudgeRequest,
    DEFAULT_JUDGE_PROMPT, JUDGE_PROMPT_VERSION,
};
pub use metrics::{
    bleu, integrated_accuracy, metric_tokens, rouge_l, unaffected_rule, MetricScores,
};
pub use semantic::{semantic_similarity, Embedder, OfflineEmbedder, RemoteEmbedder};
