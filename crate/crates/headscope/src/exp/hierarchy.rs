//! Hierarchy experiment: does degrading a step-1 function hurt a chained
//! step-2 function more than degrading an unrelated one?
//!
//! Chains are evaluated the way the model would actually be used: the
//! step-2 prompt is rebuilt around the model's *own* step-1 answer, so
//! step-1 damage propagates through the text interface rather than through
//! shared activations. Only chains the unintervened model completes
//! correctly count, so every reported drop is attributable to the mask.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::desk::{generate_task_suite, materialize_chain, DeskModel, RunOptions, TaskSuite};
use crate::error::{Error, Result};
use crate::exp::config::ExperimentConfig;
use crate::exp::pipeline::{accuracy_against_gold, evaluation_seed, ProbingArtifacts};
use crate::exp::report::{fmt_acc, fmt_llm, fmt_points, md_table, seeds_line};
use crate::intervene::{InterventionSpec, InterventionStack};
use crate::types::{CognitiveFunction, HeadId};

// ============================================================================
// Report types
// ============================================================================

/// One seed's chained evaluation under one arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchySeedRow {
    pub seed: u64,
    pub n_chains: usize,
    /// Chains whose both steps the unintervened model got right.
    pub n_originally_correct: usize,
    /// Step-2 accuracy over the originally-correct subset.
    pub step2_accuracy: f64,
    /// 1 − step2_accuracy: the filter pins the subset baseline at 1.
    pub drop: f64,
}

/// One arm: which heads were masked (if any) and what happened.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyArm {
    pub arm: String,
    pub masked_function: Option<String>,
    pub masked_heads: Vec<String>,
    pub per_seed: Vec<HierarchySeedRow>,
    pub mean_step2_accuracy: f64,
    pub mean_drop: f64,
}

/// Full hierarchy report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyReport {
    pub seeds: Vec<u64>,
    pub mask_epsilon: f64,
    pub step1_function: String,
    pub step2_function: String,
    pub unrelated_function: String,
    pub arms: Vec<HierarchyArm>,
    /// mean_drop(step-1 masked) − mean_drop(unrelated masked).
    pub related_minus_unrelated_drop: f64,
}

impl HierarchyReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Hierarchy\n\n");
        out.push_str(&seeds_line(&self.seeds));
        out.push_str(&format!(
            "Chains: {} feeds {}; unrelated control masks {}. \
             Step-2 prompts embed the model's own step-1 answer; only \
             originally-correct chains are scored.\n\n",
            self.step1_function, self.step2_function, self.unrelated_function
        ));
        let rows: Vec<Vec<String>> = self
            .arms
            .iter()
            .map(|arm| {
                vec![
                    arm.arm.clone(),
                    arm.masked_function.clone().unwrap_or_else(|| "-".into()),
                    fmt_acc(arm.mean_step2_accuracy),
                    fmt_llm(None),
                    fmt_points(arm.mean_drop),
                ]
            })
            .collect();
        out.push_str(&md_table(
            &["arm", "masked function", "step-2 acc", "llm", "drop (pts)"],
            &rows,
        ));
        out.push_str(&format!(
            "\nRelated-minus-unrelated drop: {} points.\n\n## Per-seed rows\n\n",
            fmt_points(self.related_minus_unrelated_drop)
        ));
        let rows: Vec<Vec<String>> = self
            .arms
            .iter()
            .flat_map(|arm| {
                arm.per_seed.iter().map(move |row| {
                    vec![
                        arm.arm.clone(),
                        row.seed.to_string(),
                        row.n_chains.to_string(),
                        row.n_originally_correct.to_string(),
                        fmt_acc(row.step2_accuracy),
                        fmt_points(row.drop),
                    ]
                })
            })
            .collect();
        out.push_str(&md_table(
            &["arm", "seed", "chains", "originally correct", "step-2 acc", "drop (pts)"],
            &rows,
        ));
        out
    }
}

// ============================================================================
// Running
// ============================================================================

/// Indices of (step-1, step-2) chain pairs in a suite.
fn chain_pairs(suite: &TaskSuite) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for (i2, task) in suite.tasks.iter().enumerate() {
        let Some(rule) = &task.chain else { continue };
        let i1 = suite
            .tasks
            .iter()
            .position(|t| t.record.sample_id() == rule.source_sample)
            .ok_or_else(|| {
                Error::Experiment(format!("chain source {} missing from suite", rule.source_sample))
            })?;
        pairs.push((i1, i2));
    }
    Ok(pairs)
}

/// Run every chain pair under one optional mask: step 1 with the mask, the
/// materialized step 2 with the same mask still in place. Returns per-pair
/// (step-1 correct, step-2 answer).
fn run_chains(
    model: &DeskModel,
    suite: &TaskSuite,
    pairs: &[(usize, usize)],
    mask: Option<&InterventionSpec>,
) -> Result<Vec<(bool, String)>> {
    let options = RunOptions::default();
    let mut outcomes = Vec::with_capacity(pairs.len());
    for &(i1, i2) in pairs {
        let step1 = &suite.tasks[i1];
        let step2 = &suite.tasks[i2];
        let stack = mask.map(|spec| InterventionStack::new(vec![spec]));
        let out1 = model.run_with_hooks(&step1.prompt, &options, stack.as_ref())?;
        let prompt2 = materialize_chain(step2, model.vocab(), &out1.answer_text)?;
        let out2 = model.run_with_hooks(&prompt2, &options, stack.as_ref())?;
        outcomes.push((out1.answer_text == step1.record.gold_answer, out2.answer_text));
    }
    Ok(outcomes)
}

/// The three arms: mask the step-1 function's heads, mask an unrelated
/// function's heads, mask nothing.
pub fn run_hierarchy(
    model: &DeskModel,
    config: &ExperimentConfig,
    artifacts: &ProbingArtifacts,
) -> Result<HierarchyReport> {
    let epsilon = config.intervention.mask_epsilon;
    let unrelated_function = config.intervention.hierarchy_control;

    // Suites, chain pairs and the originally-correct filter are arm-independent.
    struct SeedSetup {
        seed: u64,
        suite: TaskSuite,
        pairs: Vec<(usize, usize)>,
        keep: Vec<usize>,
    }
    let mut setups = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let suite = generate_task_suite(&config.suite_config(evaluation_seed(seed)))?;
        let pairs = chain_pairs(&suite)?;
        if pairs.is_empty() {
            return Err(Error::Experiment("suites contain no chains; raise chain_fraction".into()));
        }
        let baseline = run_chains(model, &suite, &pairs, None)?;
        let keep: Vec<usize> = (0..pairs.len())
            .filter(|&i| {
                let (step1_ok, answer2) = &baseline[i];
                *step1_ok && *answer2 == suite.tasks[pairs[i].1].record.gold_answer
            })
            .collect();
        if keep.is_empty() {
            return Err(Error::Experiment(format!(
                "seed {seed}: no originally-correct chains to evaluate"
            )));
        }
        setups.push(SeedSetup { seed, suite, pairs, keep });
    }

    // The chain's own functions come from the tasks, not from config.
    let (i1, i2) = setups[0].pairs[0];
    let step1_function = setups[0].suite.tasks[i1].record.function;
    let step2_function = setups[0].suite.tasks[i2].record.function;
    if unrelated_function == step1_function || unrelated_function == step2_function {
        return Err(Error::Experiment(format!(
            "hierarchy control {unrelated_function} participates in the chain"
        )));
    }

    // Both arms mask the same small head count (the confusion-matrix knob):
    // the fraction-based selection pads each function with weakly-ranked
    // extras that would contaminate the unrelated control.
    let top = config.intervention.matrix_heads;
    let heads_of = |function: CognitiveFunction| -> Result<BTreeSet<HeadId>> {
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
        Ok(ranking.iter().take(top).map(|(h, _)| *h).collect())
    };
    let arm_plan: Vec<(&str, Option<CognitiveFunction>)> = vec![
        ("mask_step1", Some(step1_function)),
        ("mask_unrelated", Some(unrelated_function)),
        ("mask_none", None),
    ];

    let mut arms: Vec<HierarchyArm> = Vec::new();
    for (name, masked_function) in &arm_plan {
        let spec = match masked_function {
            Some(f) => Some(InterventionSpec::Mask { heads: heads_of(*f)?, epsilon }),
            None => None,
        };
        let mut per_seed = Vec::new();
        for SeedSetup { seed, suite, pairs, keep } in &setups {
            let seed = *seed;
            let outcomes = run_chains(model, suite, pairs, spec.as_ref())?;
            let tasks: Vec<_> = keep.iter().map(|&i| &suite.tasks[pairs[i].1]).collect();
            let answers: Vec<String> = keep.iter().map(|&i| outcomes[i].1.clone()).collect();
            let accuracy = accuracy_against_gold(&tasks, &answers)?;
            per_seed.push(HierarchySeedRow {
                seed,
                n_chains: pairs.len(),
                n_originally_correct: keep.len(),
                step2_accuracy: accuracy,
                drop: 1.0 - accuracy,
            });
        }
        let n = per_seed.len() as f64;
        arms.push(HierarchyArm {
            arm: name.to_string(),
            masked_function: masked_function.map(|f| f.code().to_string()),
            masked_heads: match masked_function {
                Some(f) => heads_of(*f)?.iter().map(|h| h.to_string()).collect(),
                None => Vec::new(),
            },
            mean_step2_accuracy: per_seed.iter().map(|r| r.step2_accuracy).sum::<f64>() / n,
            mean_drop: per_seed.iter().map(|r| r.drop).sum::<f64>() / n,
            per_seed,
        });
    }

    let drop_of = |name: &str| arms.iter().find(|a| a.arm == name).map(|a| a.mean_drop);
    let related = drop_of("mask_step1").unwrap_or(0.0);
    let unrelated = drop_of("mask_unrelated").unwrap_or(0.0);

    Ok(HierarchyReport {
        seeds: config.seeds.clone(),
        mask_epsilon: epsilon,
        step1_function: step1_function.code().to_string(),
        step2_function: step2_function.code().to_string(),
        unrelated_function: unrelated_function.code().to_string(),
        arms,
        related_minus_unrelated_drop: related - unrelated,
    })
}

// ============================================================================
// Tests
// ============================================================================
