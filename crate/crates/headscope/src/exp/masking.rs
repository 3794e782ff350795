//! Masking experiments: the accuracy-vs-fraction sweep, the matched-count
//! cognitive-vs-random contrast, and the function-by-function confusion
//! matrix.
//!
//! All arms are evaluated on fresh task suites seeded independently of the
//! probing suites, so head selections are never tested on the tasks that
//! trained them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::analysis::{welch_t_test, WelchResult};
use crate::desk::{generate_task_suite, DeskModel, SyntheticTask, TaskSuite};
use crate::error::{Error, Result};
use crate::exp::config::ExperimentConfig;
use crate::exp::pipeline::{evaluate_tasks, evaluation_seed, EvalContext, ProbingArtifacts};
use crate::exp::report::{fmt_acc, fmt_llm, fmt_p, fmt_points, fmt_stat, md_table, seeds_line};
use crate::intervene::{select_random_baseline, InterventionSpec};
use crate::probe::select_cognitive_heads;
use crate::seeds::stable_seed;
use crate::types::{CognitiveFunction, HeadId};

/// Domain tag for sweep random-arm draws (no exclusion).
const SWEEP_RANDOM_TAG: u64 = 0x7377_7270; // "swrp"
/// Domain tag for contrast random-arm draws (cognitive heads excluded).
const CONTRAST_RANDOM_TAG: u64 = 0x6374_7270; // "ctrp"

// ============================================================================
// Sweep report types
// ============================================================================

/// One evaluated (function, fraction, seed) point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub function: String,
    pub fraction: f64,
    pub seed: u64,
    /// Heads masked at this fraction (⌈fraction × grid⌉).
    pub n_heads: usize,
    pub baseline: f64,
    pub cognitive: f64,
    pub random: f64,
}

/// Seed-averaged sweep point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub function: String,
    pub fraction: f64,
    pub n_heads: usize,
    pub baseline_mean: f64,
    pub cognitive_mean: f64,
    pub random_mean: f64,
}

/// Cognitive-vs-random drops at the contrast fraction, random arm drawn
/// with the cognitive heads excluded so the arms never overlap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastRow {
    pub function: String,
    pub fraction: f64,
    pub n_heads: usize,
    /// Signed per-seed drops (baseline − intervened), in accuracy points.
    pub cognitive_drops: Vec<f64>,
    pub random_drops: Vec<f64>,
    pub cognitive_drop_mean: f64,
    pub random_drop_mean: f64,
    pub welch: WelchResult,
}

/// Everything the masking-sweep experiment reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskingSweepReport {
    pub seeds: Vec<u64>,
    pub fractions: Vec<f64>,
    pub mask_epsilon: f64,
    pub cells: Vec<SweepCell>,
    pub aggregates: Vec<SweepAggregate>,
    /// Present when at least two seeds were run (Welch needs n ≥ 2).
    pub contrast: Vec<ContrastRow>,
}

impl MaskingSweepReport {
    /// Per-seed raw cells as CSV, one row per (function, fraction, seed).
    pub fn cells_csv(&self) -> String {
        let mut out = String::from("function,fraction,seed,n_heads,baseline,cognitive,random\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.function, c.fraction, c.seed, c.n_heads, c.baseline, c.cognitive, c.random
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Masking sweep\n\n");
        out.push_str(&seeds_line(&self.seeds));
        out.push_str(&format!("Mask epsilon: {}.\n\n", self.mask_epsilon));
        out.push_str("## Accuracy vs masked fraction\n\n");
        let rows: Vec<Vec<String>> = self
            .aggregates
            .iter()
            .map(|a| {
                vec![
                    a.function.clone(),
                    format!("{:.4}", a.fraction),
                    a.n_heads.to_string(),
                    fmt_acc(a.baseline_mean),
                    fmt_acc(a.cognitive_mean),
                    fmt_acc(a.random_mean),
                    fmt_llm(None),
                ]
            })
            .collect();
        out.push_str(&md_table(
            &["function", "fraction", "heads", "baseline acc", "cognitive acc", "random acc", "llm"],
            &rows,
        ));
        if !self.contrast.is_empty() {
            out.push_str("\n## Cognitive vs random drops (matched count, disjoint draws)\n\n");
            let rows: Vec<Vec<String>> = self
                .contrast
                .iter()
                .map(|c| {
                    vec![
                        c.function.clone(),
                        format!("{:.4}", c.fraction),
                        c.n_heads.to_string(),
                        fmt_points(c.cognitive_drop_mean),
                        fmt_points(c.random_drop_mean),
                        fmt_stat(c.welch.t),
                        fmt_p(c.welch.p_value),
                        c.welch.degenerate.to_string(),
                    ]
                })
                .collect();
            out.push_str(&md_table(
                &[
                    "function",
                    "fraction",
                    "heads",
                    "cognitive drop (pts)",
                    "random drop (pts)",
                    "welch t",
                    "p",
                    "degenerate",
                ],
                &rows,
            ));
        }
        out
    }
}

// ============================================================================
// Sweep
// ============================================================================

fn mask_spec(heads: &BTreeSet<HeadId>, epsilon: f64) -> InterventionSpec {
    InterventionSpec::Mask { heads: heads.clone(), epsilon }
}

/// Evaluate one arm; empty head sets mean "touch nothing".
fn arm_accuracy(
    model: &DeskModel,
    tasks: &[&SyntheticTask],
    heads: &BTreeSet<HeadId>,
    epsilon: f64,
) -> Result<f64> {
    if heads.is_empty() {
        return evaluate_tasks(model, tasks, &[], &EvalContext::default());
    }
    let spec = mask_spec(heads, epsilon);
    evaluate_tasks(model, tasks, &[&spec], &EvalContext::default())
}

fn sorted_fractions(config: &ExperimentConfig) -> Vec<f64> {
    let mut fractions = config.fractions.clone();
    fractions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    fractions.dedup();
    fractions
}

/// Fresh evaluation suites, one per configured seed.
fn evaluation_suites(config: &ExperimentConfig) -> Result<Vec<(u64, TaskSuite)>> {
    config
        .seeds
        .iter()
        .map(|&seed| Ok((seed, generate_task_suite(&config.suite_config(evaluation_seed(seed)))?)))
        .collect()
}

/// Sweep masked-head fraction for every target function.
///
/// At each point the cognitive arm masks the top ⌈fraction × grid⌉ ranked
/// heads; the random arm masks an equal-count uniform draw (no exclusion —
/// the draw may hit cognitive heads, that is the point of the curve). The
/// contrast entries re-draw the random arm with the cognitive heads
/// excluded and Welch-test the per-seed signed drops.
pub fn run_masking_sweep(
    model: &DeskModel,
    config: &ExperimentConfig,
    artifacts: &ProbingArtifacts,
) -> Result<MaskingSweepReport> {
    let geometry = model.geometry();
    let epsilon = config.intervention.mask_epsilon;
    let fractions = sorted_fractions(config);
    let suites = evaluation_suites(config)?;
    let functions = config.target_functions();

    let mut cells = Vec::new();
    let mut aggregates = Vec::new();
    let mut contrast = Vec::new();

    for &function in &functions {
        let ranking = artifacts
            .grid
            .rankings
            .get(&function)
            .ok_or_else(|| Error::Experiment(format!("no ranking for {function}")))?;

        let mut baselines = Vec::with_capacity(suites.len());
        for (_, suite) in &suites {
            let tasks = suite.function_tasks(function);
            baselines.push(evaluate_tasks(model, &tasks, &[], &EvalContext::default())?);
        }

        for &fraction in &fractions {
            let cognitive = if fraction == 0.0 {
                BTreeSet::new()
            } else {
                select_cognitive_heads(ranking, fraction)?
            };
            let n_heads = cognitive.len();
            let mut cog_sum = 0.0;
            let mut rand_sum = 0.0;
            for ((seed, suite), &baseline) in suites.iter().zip(&baselines) {
                let tasks = suite.function_tasks(function);
                let random = select_random_baseline(
                    geometry,
                    n_heads,
                    &BTreeSet::new(),
                    stable_seed(&[
                        *seed,
                        SWEEP_RANDOM_TAG,
                        function.index() as u64,
                        fraction.to_bits(),
                    ]),
                )?;
                let cognitive_acc = arm_accuracy(model, &tasks, &cognitive, epsilon)?;
                let random_acc = arm_accuracy(model, &tasks, &random, epsilon)?;
                cog_sum += cognitive_acc;
                rand_sum += random_acc;
                cells.push(SweepCell {
                    function: function.code().to_string(),
                    fraction,
                    seed: *seed,
                    n_heads,
                    baseline,
                    cognitive: cognitive_acc,
                    random: random_acc,
                });
            }
            let n = suites.len() as f64;
            aggregates.push(SweepAggregate {
                function: function.code().to_string(),
                fraction,
                n_heads,
                baseline_mean: baselines.iter().sum::<f64>() / n,
                cognitive_mean: cog_sum / n,
                random_mean: rand_sum / n,
            });
        }

        if config.seeds.len() >= 2 {
            contrast.push(contrast_row(
                model,
                config,
                ranking,
                function,
                &suites,
                &baselines,
            )?);
        }
    }

    Ok(MaskingSweepReport {
        seeds: config.seeds.clone(),
        fractions,
        mask_epsilon: epsilon,
        cells,
        aggregates,
        contrast,
    })
}

fn contrast_row(
    model: &DeskModel,
    config: &ExperimentConfig,
    ranking: &[(HeadId, f64)],
    function: CognitiveFunction,
    suites: &[(u64, TaskSuite)],
    baselines: &[f64],
) -> Result<ContrastRow> {
    let fraction = config.intervention.contrast_fraction;
    let epsilon = config.intervention.mask_epsilon;
    let cognitive = select_cognitive_heads(ranking, fraction)?;
    let mut cognitive_drops = Vec::with_capacity(suites.len());
    let mut random_drops = Vec::with_capacity(suites.len());
    for ((seed, suite), &baseline) in suites.iter().zip(baselines) {
        let tasks = suite.function_tasks(function);
        let random = select_random_baseline(
            model.geometry(),
            cognitive.len(),
            &cognitive,
            stable_seed(&[*seed, CONTRAST_RANDOM_TAG, function.index() as u64]),
        )?;
        cognitive_drops.push(baseline - arm_accuracy(model, &tasks, &cognitive, epsilon)?);
        random_drops.push(baseline - arm_accuracy(model, &tasks, &random, epsilon)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ContrastRow {
        function: function.code().to_string(),
        fraction,
        n_heads: cognitive.len(),
        cognitive_drop_mean: mean(&cognitive_drops),
        random_drop_mean: mean(&random_drops),
        welch: welch_t_test(&cognitive_drops, &random_drops)?,
        cognitive_drops,
        random_drops,
    })
}

// ============================================================================
// Confusion matrix
// ============================================================================

/// One (masked, evaluated, seed) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionCell {
    pub masked: String,
    pub evaluated: String,
    pub seed: u64,
    pub baseline: f64,
    pub accuracy: f64,
    /// baseline − accuracy, signed.
    pub drop: f64,
}

/// The function-by-function mask/evaluate matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub seeds: Vec<u64>,
    pub mask_epsilon: f64,
    /// Ranked heads masked per function.
    pub matrix_heads: usize,
    /// Row/column order of `mean_drop`.
    pub functions: Vec<String>,
    /// Heads masked for each function.
    pub masked_heads: Vec<Vec<String>>,
    pub cells: Vec<ConfusionCell>,
    /// Seed-mean drop, indexed `[masked][evaluated]`.
    pub mean_drop: Vec<Vec<f64>>,
    /// Seed-mean unmasked accuracy per evaluated function.
    pub mean_baseline: Vec<f64>,
}

impl ConfusionReport {
    /// The seed-mean drop matrix as CSV (rows = masked function).
    pub fn matrix_csv(&self) -> String {
        let mut out = String::from("masked");
        for f in &self.functions {
            out.push_str(&format!(",{f}"));
        }
        out.push('\n');
        for (row, masked) in self.mean_drop.iter().zip(&self.functions) {
            out.push_str(masked);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Confusion matrix\n\n");
        out.push_str(&seeds_line(&self.seeds));
        out.push_str(&format!(
            "Masking the top {} ranked head(s) per function at epsilon {}. \
             Cells are seed-mean accuracy drops in points (baseline − masked); \
             rows mask, columns evaluate.\n\n",
            self.matrix_heads, self.mask_epsilon
        ));
        let mut headers: Vec<&str> = vec!["masked \\ evaluated"];
        headers.extend(self.functions.iter().map(String::as_str));
        let rows: Vec<Vec<String>> = self
            .mean_drop
            .iter()
            .zip(&self.functions)
            .map(|(row, masked)| {
                let mut cells = vec![masked.clone()];
                cells.extend(row.iter().map(|&v| fmt_points(v)));
                cells
            })
            .collect();
        out.push_str(&md_table(&headers, &rows));
        out.push_str("\nUnmasked baseline accuracy per evaluated function:\n\n");
        let rows: Vec<Vec<String>> = self
            .functions
            .iter()
            .zip(&self.mean_baseline)
            .map(|(f, &b)| vec![f.clone(), fmt_acc(b), fmt_llm(None)])
            .collect();
        out.push_str(&md_table(&["function", "acc", "llm"], &rows));
        out
    }
}

/// Mask each function's top-ranked heads and evaluate every function.
///
/// Second-step chain tasks are excluded from the evaluated sets: their
/// prompts embed the upstream gold answer, and chained evaluation is the
/// hierarchy experiment's job.
pub fn run_confusion_matrix(
    model: &DeskModel,
    config: &ExperimentConfig,
    artifacts: &ProbingArtifacts,
) -> Result<ConfusionReport> {
    let epsilon = config.intervention.mask_epsilon;
    let top = config.intervention.matrix_heads;
    let functions = config.target_functions();
    let suites = evaluation_suites(config)?;

    let mut selected: Vec<BTreeSet<HeadId>> = Vec::with_capacity(functions.len());
    for &function in &functions {
        let ranking = artifacts
            .grid
            .rankings
            .get(&function)
            .ok_or_else(|| Error::Experiment(format!("no ranking for {function}")))?;
        if top > ranking.len() {
            return Err(Error::Experiment(format!(
                "matrix_heads {top} exceeds grid size {}",
                ranking.len()
            )));
        }
        selected.push(ranking.iter().take(top).map(|(h, _)| *h).collect());
    }

    let standalone = |suite: &TaskSuite, function: CognitiveFunction| -> Vec<usize> {
        suite
            .tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.record.function == function && t.chain.is_none())
            .map(|(i, _)| i)
            .collect()
    };

    let mut cells = Vec::new();
    let mut drop_sums = vec![vec![0.0f64; functions.len()]; functions.len()];
    let mut baseline_sums = vec![0.0f64; functions.len()];
    for (seed, suite) in &suites {
        for (e, &evaluated) in functions.iter().enumerate() {
            let indices = standalone(suite, evaluated);
            let tasks: Vec<&SyntheticTask> = indices.iter().map(|&i| &suite.tasks[i]).collect();
            let baseline = evaluate_tasks(model, &tasks, &[], &EvalContext::default())?;
            baseline_sums[e] += baseline;
            for (m, heads) in selected.iter().enumerate() {
                let accuracy = arm_accuracy(model, &tasks, heads, epsilon)?;
                drop_sums[m][e] += baseline - accuracy;
                cells.push(ConfusionCell {
                    masked: functions[m].code().to_string(),
                    evaluated: evaluated.code().to_string(),
                    seed: *seed,
                    baseline,
                    accuracy,
                    drop: baseline - accuracy,
                });
            }
        }
    }
    let n = suites.len() as f64;
    let mean_drop: Vec<Vec<f64>> =
        drop_sums.into_iter().map(|row| row.into_iter().map(|v| v / n).collect()).collect();
    let mean_baseline: Vec<f64> = baseline_sums.into_iter().map(|v| v / n).collect();

    Ok(ConfusionReport {
        seeds: config.seeds.clone(),
        mask_epsilon: epsilon,
        matrix_heads: top,
        functions: functions.iter().map(|f| f.code().to_string()).collect(),
        masked_heads: selected
            .iter()
            .map(|set| set.iter().map(|h| h.to_string()).collect())
            .collect(),
        cells,
        mean_drop,
        mean_baseline,
    })
}

// ============================================================================
// Tests
// ============================================================================
