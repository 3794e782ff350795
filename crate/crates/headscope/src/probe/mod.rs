//! Per-head linear probing: dataset assembly, training, ranking, heatmaps.

pub mod dataset;
pub mod rank;
pub mod train;

pub use dataset::{
    build_probe_dataset, materialize_head, split_main_questions, DatasetOptions, HeadExamples,
    LabelledSample, ProbeDataset,
};
pub use rank::{rank_heads, select_cognitive_heads, HeatmapGrid};
pub use train::{train_probe, ProbeResult, Standardizer, TrainConfig};
