//! Experiment orchestration.
//!
//! Every experiment is a pure function of its [`ExperimentConfig`]: suites,
//! splits, random draws and probe initializations all derive from the
//! config's explicit seed lists, so running the same config twice writes
//! byte-identical reports into the same content-addressed directory.
//!
//! [`run_experiment`] is the single entry point: it validates the config,
//! builds the model, trains whatever probes the experiment needs, runs the
//! experiment and writes `report.json` plus `report.md` (and per-kind CSV
//! sidecars) through one [`report::ReportWriter`].

pub mod config;
pub mod hierarchy;
pub mod masking;
pub mod pipeline;
pub mod report;
pub mod sensitivity;
pub mod steering;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use config::{
    ExperimentConfig, ExperimentKind, InterventionSettings, ModelSource, ProbeSettings,
    SensitivitySettings, SuiteSettings,
};
pub use hierarchy::{run_hierarchy, HierarchyReport};
pub use masking::{run_confusion_matrix, run_masking_sweep, ConfusionReport, MaskingSweepReport};
pub use pipeline::{
    accuracy_against_gold, answers_with_specs, build_feature_store, build_patch_bank,
    capture_head_outputs, evaluate_tasks, evaluation_seed, labelled_pool, null_probe_means,
    probe_grid, probe_grid_from_dump, run_and_capture, run_probing, sample_key, EvalContext,
    GridOutcome, LabelledPool, ProbingArtifacts,
};
pub use report::{config_digest, experiment_dir, ReportWriter};
pub use sensitivity::{run_sensitivity, SensitivityReport};
pub use steering::{run_steering_eval, SteeringReport};

use crate::desk::{build_desk_model, default_planted_map, DeskModel, DeskModelConfig};
use crate::error::{Error, Result};
use crate::exp::report::{fmt_acc, fmt_llm, md_table, seeds_line};
use crate::types::{read_subqaf_jsonl, ModelGeometry};

// ============================================================================
// Probing report
// ============================================================================

/// One function's probing summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbingFunctionRow {
    pub function: String,
    pub n_records: usize,
    /// Unintervened exact-match accuracy (absent for dump sources, which
    /// carry labels but no rerunnable model).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_accuracy: Option<f64>,
    pub top_head: String,
    pub top_probe_accuracy: f64,
    pub selected_heads: Vec<String>,
    /// Mean probe accuracy over the whole grid.
    pub grid_mean: f64,
}

/// Summary emitted by the probing experiment; the full grids live in the
/// heatmap sidecars.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbingReport {
    pub seeds: Vec<u64>,
    pub geometry: ModelGeometry,
    pub n_records: usize,
    pub rows: Vec<ProbingFunctionRow>,
}

impl ProbingReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Probing\n\n");
        out.push_str(&seeds_line(&self.seeds));
        out.push_str(&format!(
            "Grid {}×{} heads, head dim {}; {} labelled records.\n\n",
            self.geometry.n_layers, self.geometry.n_heads, self.geometry.head_dim, self.n_records
        ));
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.function.clone(),
                    r.n_records.to_string(),
                    r.label_accuracy.map(fmt_acc).unwrap_or_else(|| "-".into()),
                    fmt_llm(None),
                    r.top_head.clone(),
                    fmt_acc(r.top_probe_accuracy),
                    r.selected_heads.join(" "),
                    fmt_acc(r.grid_mean),
                ]
            })
            .collect();
        out.push_str(&md_table(
            &["function", "records", "acc", "llm", "top head", "top probe acc", "selected", "grid mean"],
            &rows,
        ));
        out
    }
}

fn probing_report(
    config: &ExperimentConfig,
    geometry: ModelGeometry,
    n_records: usize,
    records_per_function: &dyn Fn(crate::types::CognitiveFunction) -> usize,
    label_accuracy: Option<&std::collections::BTreeMap<crate::types::CognitiveFunction, f64>>,
    grid: &GridOutcome,
) -> ProbingReport {
    let rows = config
        .target_functions()
        .iter()
        .map(|&function| {
            let ranking = &grid.rankings[&function];
            let results = &grid.results[&function];
            ProbingFunctionRow {
                function: function.code().to_string(),
                n_records: records_per_function(function),
                label_accuracy: label_accuracy.and_then(|m| m.get(&function).copied()),
                top_head: ranking[0].0.to_string(),
                top_probe_accuracy: ranking[0].1,
                selected_heads: grid.selected[&function].iter().map(|h| h.to_string()).collect(),
                grid_mean: results.iter().map(|r| r.test_accuracy).sum::<f64>()
                    / results.len() as f64,
            }
        })
        .collect();
    ProbingReport { seeds: config.seeds.clone(), geometry, n_records, rows }
}

fn write_heatmaps(writer: &ReportWriter, grid: &GridOutcome) -> Result<()> {
    let heatmaps: Vec<_> = grid.heatmaps.values().collect();
    writer.write_json("heatmaps.json", &heatmaps)?;
    for (function, heatmap) in &grid.heatmaps {
        writer.write_text(&format!("heatmap-{}.csv", function.code()), &heatmap.to_csv())?;
    }
    Ok(())
}

// ============================================================================
// Entry point
// ============================================================================

/// Build the desk model a config names; dump sources have no model.
pub fn desk_model_from(source: &ModelSource) -> Result<DeskModel> {
    match source {
        ModelSource::Desk { seed, geometry } => {
            let mut model_config = DeskModelConfig::new(*seed);
            if let Some(geometry) = geometry {
                model_config.geometry = *geometry;
                model_config.planted = default_planted_map(*geometry);
            }
            build_desk_model(&model_config)
        }
        ModelSource::DumpFiles { .. } => {
            Err(Error::Experiment("a pre-recorded dump cannot be run as a model".into()))
        }
    }
}

/// Validate, run, and write one experiment; returns the run directory.
pub fn run_experiment(experiment: &ExperimentConfig) -> Result<PathBuf> {
    experiment.validate()?;
    let writer = ReportWriter::create(experiment)?;

    if experiment.kind == ExperimentKind::Probing {
        if let ModelSource::DumpFiles { dump, records } = &experiment.model {
            let dump = crate::store::read_dump(dump)?;
            let records = read_subqaf_jsonl(records)?;
            let grid = probe_grid_from_dump(&dump, &records, experiment)?;
            let per_function = |f| records.iter().filter(|r| r.function == f).count();
            let report = probing_report(
                experiment,
                dump.manifest.geometry,
                records.len(),
                &per_function,
                None,
                &grid,
            );
            writer.write_json("report.json", &report)?;
            writer.write_text("report.md", &report.to_markdown())?;
            write_heatmaps(&writer, &grid)?;
            return Ok(writer.dir().to_path_buf());
        }
    }

    let model = desk_model_from(&experiment.model)?;
    // Rankings must exist for chain participants and steering targets even
    // when the experiment itself is scoped to fewer functions.
    let mut probing_config = experiment.clone();
    probing_config.functions = Vec::new();
    let artifacts = run_probing(&model, &probing_config)?;

    match experiment.kind {
        ExperimentKind::Probing => {
            let per_function =
                |f| artifacts.records.iter().filter(|r| r.function == f).count();
            let report = probing_report(
                experiment,
                artifacts.geometry,
                artifacts.records.len(),
                &per_function,
                Some(&artifacts.label_accuracy),
                &artifacts.grid,
            );
            writer.write_json("report.json", &report)?;
            writer.write_text("report.md", &report.to_markdown())?;
            write_heatmaps(&writer, &artifacts.grid)?;
        }
        ExperimentKind::MaskingSweep => {
            let report = run_masking_sweep(&model, experiment, &artifacts)?;
            writer.write_json("report.json", &report)?;
            writer.write_text("report.md", &report.to_markdown())?;
            writer.write_text("cells.csv", &report.cells_csv())?;
        }
        ExperimentKind::ConfusionMatrix => {
            let report = run_confusion_matrix(&model, experiment, &artifacts)?;
            writer.write_json("report.json", &report)?;
            writer.write_text("report.md", &report.to_markdown())?;
            writer.write_text("matrix.csv", &report.matrix_csv())?;
        }
        ExperimentKind::Hierarchy => {
            let report = run_hierarchy(&model, experiment, &artifacts)?;
            writer.write_json("report.json", &report)?;
            writer.write_text("report.md", &report.to_markdown())?;
        }
        ExperimentKind::Steering => {
            let report = run_steering_eval(&model, experiment, &artifacts)?;
            writer.write_json("report.json", &report)?;
            writer.write_text("report.md", &report.to_markdown())?;
        }
        ExperimentKind::Sensitivity => {
            let report = run_sensitivity(&model, experiment, &artifacts)?;
            writer.write_json("report.json", &report)?;
            writer.write_text("report.md", &report.to_markdown())?;
        }
    }
    Ok(writer.dir().to_path_buf())
}

// ============================================================================
// Tests
// ============================================================================
