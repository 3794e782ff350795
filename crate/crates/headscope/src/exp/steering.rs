//! Steering experiment: partially degrade one function, learn the
//! correct-minus-incorrect direction from that degraded run, then steer
//! along it and measure recovery.
//!
//! Directions are computed on a train split and evaluated on the held-out
//! split, both under the same partial mask, so before/after accuracies are
//! paired and the only difference is the steering term.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::desk::{generate_task_suite, DeskModel, SyntheticTask};
use crate::error::{Error, Result};
use crate::exp::config::ExperimentConfig;
use crate::exp::pipeline::{
    capture_head_outputs, evaluate_tasks, evaluation_seed, EvalContext, ProbingArtifacts,
};
use crate::exp::report::{fmt_acc, fmt_llm, fmt_stat, md_table, seeds_line};
use crate::intervene::{compute_direction, InterventionSpec, SteeringDirection};
use crate::seeds::stable_seed;
use crate::types::HeadId;

/// Domain tag behind the train/eval task split.
const STEER_SPLIT_TAG: u64 = 0x7374_7370; // "stsp"

// ============================================================================
// Report types
// ============================================================================

/// Paired accuracies for one steering strength on one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    /// Partial mask only.
    pub before: f64,
    /// Partial mask plus steering.
    pub after: f64,
    pub delta: f64,
}

/// Direction diagnostics for one steered head on one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadDirectionStat {
    pub head: String,
    pub sigma: f64,
    /// Cosine between the learned direction and the model's planted
    /// read-out axis for the target function.
    pub cosine_to_planted_axis: f64,
    pub zero_direction: bool,
}

/// One seed's full steering outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteeringSeedRow {
    pub seed: u64,
    pub n_train: usize,
    pub n_train_correct: usize,
    pub n_train_incorrect: usize,
    pub n_eval: usize,
    pub heads: Vec<HeadDirectionStat>,
    pub rows: Vec<AlphaRow>,
}

/// Seed-mean recovery at one steering strength.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaAggregate {
    pub alpha: f64,
    pub before_mean: f64,
    pub after_mean: f64,
    /// Seeds where steering strictly improved accuracy.
    pub improved_seeds: usize,
}

/// Full steering report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteeringReport {
    pub seeds: Vec<u64>,
    pub function: String,
    pub partial_epsilon: f64,
    pub steered_heads: Vec<String>,
    pub per_seed: Vec<SteeringSeedRow>,
    pub aggregates: Vec<AlphaAggregate>,
}

impl SteeringReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Steering\n\n");
        out.push_str(&seeds_line(&self.seeds));
        out.push_str(&format!(
            "Target {} partially masked at epsilon {} on heads [{}]; directions \
             learned from train-split correctness under that mask.\n\n",
            self.function,
            self.partial_epsilon,
            self.steered_heads.join(", ")
        ));
        let rows: Vec<Vec<String>> = self
            .aggregates
            .iter()
            .map(|a| {
                vec![
                    fmt_stat(a.alpha),
                    fmt_acc(a.before_mean),
                    fmt_acc(a.after_mean),
                    fmt_llm(None),
                    format!("{}/{}", a.improved_seeds, self.seeds.len()),
                ]
            })
            .collect();
        out.push_str(&md_table(
            &["alpha", "before acc", "after acc", "llm", "improved seeds"],
            &rows,
        ));
        out.push_str("\n## Per-seed rows\n\n");
        let rows: Vec<Vec<String>> = self
            .per_seed
            .iter()
            .flat_map(|row| {
                row.rows.iter().map(move |r| {
                    vec![
                        row.seed.to_string(),
                        fmt_stat(r.alpha),
                        fmt_acc(r.before),
                        fmt_acc(r.after),
                        fmt_acc(r.delta),
                    ]
                })
            })
            .collect();
        out.push_str(&md_table(&["seed", "alpha", "before", "after", "delta"], &rows));
        out
    }
}

// ============================================================================
// Running
// ============================================================================

/// Deterministic half/half split of a function's tasks by sample id.
fn split_tasks<'a>(
    tasks: &[&'a SyntheticTask],
    seed: u64,
) -> (Vec<&'a SyntheticTask>, Vec<&'a SyntheticTask>) {
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by_key(|&i| tasks[i].record.sample_id());
    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[seed, STEER_SPLIT_TAG]));
    order.shuffle(&mut rng);
    let cut = tasks.len() / 2;
    let train = order[..cut].iter().map(|&i| tasks[i]).collect();
    let eval = order[cut..].iter().map(|&i| tasks[i]).collect();
    (train, eval)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Degrade, learn directions, steer at every configured alpha.
pub fn run_steering_eval(
    model: &DeskModel,
    config: &ExperimentConfig,
    artifacts: &ProbingArtifacts,
) -> Result<SteeringReport> {
    let function = config.intervention.steering_target;
    let epsilon = config.intervention.partial_epsilon;
    let mut alphas = config.intervention.alphas.clone();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    alphas.dedup();
    let heads: BTreeSet<HeadId> = artifacts
        .grid
        .selected
        .get(&function)
        .cloned()
        .ok_or_else(|| Error::Experiment(format!("no head selection for {function}")))?;
    let partial = InterventionSpec::Mask { heads: heads.clone(), epsilon };
    let planted_axis = model.planted_axis(function);

    let mut per_seed = Vec::new();
    for &seed in &config.seeds {
        let suite = generate_task_suite(&config.suite_config(evaluation_seed(seed)))?;
        let tasks = suite.function_tasks(function);
        let (train, eval) = split_tasks(&tasks, seed);
        if train.is_empty() || eval.is_empty() {
            return Err(Error::Experiment(format!(
                "seed {seed}: {} tasks cannot fill both steering splits",
                tasks.len()
            )));
        }

        // Directions come from captures under the same partial mask that
        // evaluation runs with.
        let captured =
            capture_head_outputs(model, &train, &[&partial], &EvalContext::default(), &heads)?;
        let n_correct = captured.iter().filter(|c| c.correct).count();
        let n_incorrect = captured.len() - n_correct;
        let mut directions: BTreeMap<HeadId, SteeringDirection> = BTreeMap::new();
        let mut stats = Vec::new();
        for &head in &heads {
            let correct: Vec<Vec<f32>> = captured
                .iter()
                .filter(|c| c.correct)
                .map(|c| c.outputs[&head].clone())
                .collect();
            let incorrect: Vec<Vec<f32>> = captured
                .iter()
                .filter(|c| !c.correct)
                .map(|c| c.outputs[&head].clone())
                .collect();
            let direction = compute_direction(&correct, &incorrect).map_err(|e| {
                Error::Experiment(format!(
                    "seed {seed}: cannot learn a direction for {head}: {e} \
                     (the partial mask left no mixed-correctness evidence)"
                ))
            })?;
            stats.push(HeadDirectionStat {
                head: head.to_string(),
                sigma: direction.sigma,
                cosine_to_planted_axis: cosine(&direction.dir, &planted_axis),
                zero_direction: direction.zero_direction,
            });
            directions.insert(head, direction);
        }

        let ctx = EvalContext { bank: None, directions: Some(&directions) };
        let before = evaluate_tasks(model, &eval, &[&partial], &EvalContext::default())?;
        let mut rows = Vec::with_capacity(alphas.len());
        for &alpha in &alphas {
            let steer = InterventionSpec::Steer { heads: heads.clone(), alpha };
            let after = evaluate_tasks(model, &eval, &[&partial, &steer], &ctx)?;
            rows.push(AlphaRow { alpha, before, after, delta: after - before });
        }
        per_seed.push(SteeringSeedRow {
            seed,
            n_train: train.len(),
            n_train_correct: n_correct,
            n_train_incorrect: n_incorrect,
            n_eval: eval.len(),
            heads: stats,
            rows,
        });
    }

    let aggregates = alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let n = per_seed.len() as f64;
            AlphaAggregate {
                alpha,
                before_mean: per_seed.iter().map(|s| s.rows[i].before).sum::<f64>() / n,
                after_mean: per_seed.iter().map(|s| s.rows[i].after).sum::<f64>() / n,
                improved_seeds: per_seed.iter().filter(|s| s.rows[i].delta > 0.0).count(),
            }
        })
        .collect();

    Ok(SteeringReport {
        seeds: config.seeds.clone(),
        function: function.code().to_string(),
        partial_epsilon: epsilon,
        steered_heads: heads.iter().map(|h| h.to_string()).collect(),
        per_seed,
        aggregates,
    })
}

// ============================================================================
// Tests
// ============================================================================
