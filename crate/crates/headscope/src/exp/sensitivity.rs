//! Sensitivity experiment: how stable are the probe heatmaps under
//! analysis choices that should not matter?
//!
//! Two dimensions are swept: the number of answer tokens aggregated into
//! features (k), and the probe initialization seed (with a small nonzero
//! init scale, since a zero scale would make every seed identical by
//! construction). Stability is summarized as the Pearson correlation
//! between full heatmap grids, per function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::pearson;
use crate::error::Result;
use crate::exp::config::ExperimentConfig;
use crate::exp::pipeline::{build_feature_store, dataset_key, probe_grid, ProbingArtifacts};
use crate::exp::report::{fmt_stat, md_table, seeds_line};
use crate::probe::HeatmapGrid;
use crate::types::CognitiveFunction;

// ============================================================================
// Report types
// ============================================================================

/// Correlation between one variant grid and the reference grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityComparison {
    /// What was varied: `answer_tokens` or `probe_seed`.
    pub dimension: String,
    pub reference: String,
    pub variant: String,
    /// Pearson r between full heatmaps, per function.
    pub per_function_r: BTreeMap<String, f64>,
    pub min_r: f64,
}

/// Full sensitivity report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub seeds: Vec<u64>,
    pub k_values: Vec<usize>,
    pub probe_seeds: Vec<u64>,
    pub init_scale: f64,
    pub comparisons: Vec<SensitivityComparison>,
}

impl SensitivityReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Sensitivity\n\n");
        out.push_str(&seeds_line(&self.seeds));
        out.push_str(&format!(
            "Token-selection widths {:?} against k = {}; probe seeds {:?} \
             against seed {} at init scale {}.\n\n",
            self.k_values,
            self.k_values.first().copied().unwrap_or_default(),
            self.probe_seeds,
            self.probe_seeds.first().copied().unwrap_or_default(),
            self.init_scale
        ));
        let rows: Vec<Vec<String>> = self
            .comparisons
            .iter()
            .flat_map(|c| {
                c.per_function_r.iter().map(move |(function, &r)| {
                    vec![
                        c.dimension.clone(),
                        c.reference.clone(),
                        c.variant.clone(),
                        function.clone(),
                        fmt_stat(r),
                    ]
                })
            })
            .collect();
        out.push_str(&md_table(&["dimension", "reference", "variant", "function", "r"], &rows));
        out.push_str("\nMinimum r per comparison:\n\n");
        let rows: Vec<Vec<String>> = self
            .comparisons
            .iter()
            .map(|c| {
                vec![c.dimension.clone(), c.variant.clone(), fmt_stat(c.min_r)]
            })
            .collect();
        out.push_str(&md_table(&["dimension", "variant", "min r"], &rows));
        out
    }
}

// ============================================================================
// Running
// ============================================================================

fn compare(
    dimension: &str,
    reference_name: String,
    variant_name: String,
    functions: &[CognitiveFunction],
    reference: &BTreeMap<CognitiveFunction, HeatmapGrid>,
    variant: &BTreeMap<CognitiveFunction, HeatmapGrid>,
) -> Result<SensitivityComparison> {
    let mut per_function_r = BTreeMap::new();
    let mut min_r = f64::INFINITY;
    for &function in functions {
        let r = pearson(&reference[&function], &variant[&function])?;
        min_r = min_r.min(r);
        per_function_r.insert(function.code().to_string(), r);
    }
    Ok(SensitivityComparison {
        dimension: dimension.to_string(),
        reference: reference_name,
        variant: variant_name,
        per_function_r,
        min_r,
    })
}

/// Re-train the grid under each swept setting and correlate heatmaps.
///
/// The labelled pool (records and captures) is reused from `artifacts`:
/// neither k nor the probe seed affects model runs, only what happens to
/// the captured activations afterwards.
pub fn run_sensitivity(
    model: &crate::desk::DeskModel,
    config: &ExperimentConfig,
    artifacts: &ProbingArtifacts,
) -> Result<SensitivityReport> {
    let _ = model; // runs come from the artifacts; the model pins the source
    let functions = config.target_functions();
    let key = dataset_key(&config.seeds);
    let sens = &config.sensitivity;
    let mut comparisons = Vec::new();

    // --- answer-token width ---------------------------------------------
    let mut k_grids: BTreeMap<usize, BTreeMap<CognitiveFunction, HeatmapGrid>> = BTreeMap::new();
    for &k in &sens.k_values {
        let store =
            build_feature_store(artifacts.geometry, &artifacts.records, &artifacts.samples, k)?;
        let grid = probe_grid(&artifacts.records, &store, &functions, &config.probe, key)?;
        k_grids.insert(k, grid.heatmaps);
    }
    let k_ref = sens.k_values[0];
    for &k in &sens.k_values[1..] {
        comparisons.push(compare(
            "answer_tokens",
            format!("k={k_ref}"),
            format!("k={k}"),
            &functions,
            &k_grids[&k_ref],
            &k_grids[&k],
        )?);
    }

    // --- probe seed -------------------------------------------------------
    let store = build_feature_store(
        artifacts.geometry,
        &artifacts.records,
        &artifacts.samples,
        config.probe.answer_tokens,
    )?;
    let mut seed_grids: BTreeMap<u64, BTreeMap<CognitiveFunction, HeatmapGrid>> = BTreeMap::new();
    for &probe_seed in &sens.probe_seeds {
        let mut probe = config.probe.clone();
        probe.seed = probe_seed;
        probe.init_scale = sens.init_scale;
        let grid = probe_grid(&artifacts.records, &store, &functions, &probe, key)?;
        seed_grids.insert(probe_seed, grid.heatmaps);
    }
    let seed_ref = sens.probe_seeds[0];
    for &probe_seed in &sens.probe_seeds[1..] {
        comparisons.push(compare(
            "probe_seed",
            format!("seed={seed_ref}"),
            format!("seed={probe_seed}"),
            &functions,
            &seed_grids[&seed_ref],
            &seed_grids[&probe_seed],
        )?);
    }

    Ok(SensitivityReport {
        seeds: config.seeds.clone(),
        k_values: sens.k_values.clone(),
        probe_seeds: sens.probe_seeds.clone(),
        init_scale: sens.init_scale,
        comparisons,
    })
}

// ============================================================================
// Tests
// ============================================================================
