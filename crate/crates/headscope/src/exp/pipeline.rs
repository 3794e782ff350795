//! The shared probing pipeline and evaluation plumbing.
//!
//! Everything here is glue between the existing stages: generate task
//! suites, run the model once per task to label answers and capture head
//! outputs, aggregate features over selected answer tokens, train the
//! probe grid, and evaluate task sets under intervention stacks. The
//! interventional experiments all build on these pieces.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::desk::{generate_task_suite, DeskModel, RunOptions, SyntheticTask, TaskSuite};
use crate::error::{Error, Result};
use crate::eval::{integrated_accuracy, OfflineEmbedder};
use crate::exp::config::{ExperimentConfig, ProbeSettings};
use crate::intervene::{InterventionSpec, InterventionStack, PatchBank, SteeringDirection};
use crate::par::par_map;
use crate::probe::{
    build_probe_dataset, materialize_head, rank_heads, select_cognitive_heads, train_probe,
    DatasetOptions, HeatmapGrid, ProbeDataset, ProbeResult,
};
use crate::seeds::stable_seed;
use crate::store::{aggregate_features, select_token_indices, split_answer_tokens, FeatureStore,
    OfflineScorer, SampleActivations, TokenSelector};
use crate::types::{CognitiveFunction, HeadId, ModelGeometry, SubQAFRecord};

/// Domain tag separating evaluation-suite seeds from probing-suite seeds.
const EVAL_SUITE_TAG: u64 = 0x6576_616c; // "eval"
/// Domain tag behind per-function dataset balance seeds.
const DATASET_TAG: u64 = 0x6461_7461; // "data"
/// Domain tag behind label-shuffle draws.
const NULL_TAG: u64 = 0x6e75_6c6c; // "null"

// ============================================================================
// Labelling and capture
// ============================================================================

/// Run every task once without interventions: fill in
/// `model_answer`/`model_correct` (exact string match, the same rule the
/// labelling pass uses) and return the captured activations, aligned with
/// `suite.tasks`.
pub fn run_and_capture(
    model: &DeskModel,
    suite: &mut TaskSuite,
    capture_attention: bool,
) -> Result<Vec<SampleActivations>> {
    let options = RunOptions { capture_attention, ..RunOptions::default() };
    let runs = par_map(&suite.tasks, |task| -> Result<(String, SampleActivations)> {
        let out = model.run_with_hooks(&task.prompt, &options, None)?;
        Ok((out.answer_text.clone(), out.into_sample(&task.record.sample_id())))
    });
    let mut samples = Vec::with_capacity(runs.len());
    for (task, run) in suite.tasks.iter_mut().zip(runs) {
        let (answer, sample) = run?;
        task.record.model_correct = Some(answer == task.record.gold_answer);
        task.record.model_answer = Some(answer);
        samples.push(sample);
    }
    Ok(samples)
}

/// Labelled records plus captures pooled over every seed in the config.
#[derive(Debug, Clone)]
pub struct LabelledPool {
    pub geometry: ModelGeometry,
    pub records: Vec<SubQAFRecord>,
    pub samples: Vec<SampleActivations>,
    /// Unintervened exact-match accuracy per function over the pool.
    pub label_accuracy: BTreeMap<CognitiveFunction, f64>,
}

/// Generate, label and capture one suite per configured seed.
pub fn labelled_pool(model: &DeskModel, config: &ExperimentConfig) -> Result<LabelledPool> {
    let mut records = Vec::new();
    let mut samples = Vec::new();
    for &seed in &config.seeds {
        let mut suite = generate_task_suite(&config.suite_config(seed))?;
        samples.extend(run_and_capture(model, &mut suite, config.probe.capture_attention)?);
        records.extend(suite.records());
    }
    let mut label_accuracy = BTreeMap::new();
    for function in CognitiveFunction::ALL {
        let of_function: Vec<&SubQAFRecord> =
            records.iter().filter(|r| r.function == function).collect();
        if of_function.is_empty() {
            continue;
        }
        let correct = of_function.iter().filter(|r| r.model_correct == Some(true)).count();
        label_accuracy.insert(function, correct as f64 / of_function.len() as f64);
    }
    Ok(LabelledPool { geometry: model.geometry(), records, samples, label_accuracy })
}

// ============================================================================
// Feature aggregation
// ============================================================================

/// Selected answer-token indices per sample: rank each record's answer
/// tokens with the offline scorer (corpus = every model answer in the
/// batch) and keep the top `k`. Records without a model answer are skipped.
pub fn selections_for_records(
    records: &[SubQAFRecord],
    k: usize,
) -> Result<BTreeMap<String, Vec<usize>>> {
    let scorer =
        OfflineScorer::from_corpus(records.iter().filter_map(|r| r.model_answer.as_deref()));
    let selector = TokenSelector::Offline(scorer);
    let mut selections = BTreeMap::new();
    for record in records {
        let Some(answer) = record.model_answer.as_deref() else { continue };
        let tokens = split_answer_tokens(answer);
        if tokens.is_empty() {
            continue;
        }
        let selection = select_token_indices(&tokens, k, &selector)?;
        selections.insert(record.sample_id(), selection.indices);
    }
    Ok(selections)
}

/// Aggregate per-head features for every labelled sample.
pub fn build_feature_store(
    geometry: ModelGeometry,
    records: &[SubQAFRecord],
    samples: &[SampleActivations],
    k: usize,
) -> Result<FeatureStore> {
    let selections = selections_for_records(records, k)?;
    let mut store = FeatureStore::new_empty(geometry);
    for sample in samples {
        let Some(indices) = selections.get(&sample.sample_id) else { continue };
        store.insert(sample.sample_id.clone(), aggregate_features(sample, indices)?);
    }
    Ok(store)
}

// ============================================================================
// Probe grid
// ============================================================================

/// Trained grid for a set of functions: raw results, accuracy rankings,
/// heatmaps, and the selected cognitive-head sets.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub results: BTreeMap<CognitiveFunction, Vec<ProbeResult>>,
    pub rankings: BTreeMap<CognitiveFunction, Vec<(HeadId, f64)>>,
    pub heatmaps: BTreeMap<CognitiveFunction, HeatmapGrid>,
    pub selected: BTreeMap<CognitiveFunction, BTreeSet<HeadId>>,
}

/// Per-function dataset options with a derived balance seed.
fn dataset_options(probe: &ProbeSettings, dataset_key: u64, function: CognitiveFunction) -> DatasetOptions {
    DatasetOptions {
        test_fraction: probe.test_fraction,
        min_positives: probe.min_positives,
        balance_seed: stable_seed(&[dataset_key, DATASET_TAG, function.index() as u64]),
    }
}

/// Train one probe per (function, head) over the whole grid.
pub fn probe_grid(
    records: &[SubQAFRecord],
    store: &FeatureStore,
    functions: &[CognitiveFunction],
    probe: &ProbeSettings,
    dataset_key: u64,
) -> Result<GridOutcome> {
    let geometry = store.geometry();
    let heads: Vec<HeadId> = geometry.heads().collect();
    let mut outcome = GridOutcome {
        results: BTreeMap::new(),
        rankings: BTreeMap::new(),
        heatmaps: BTreeMap::new(),
        selected: BTreeMap::new(),
    };
    for &function in functions {
        let dataset =
            build_probe_dataset(records, Some(store), function, &dataset_options(probe, dataset_key, function))?;
        let trained = par_map(&heads, |&head| {
            let (train, test) = materialize_head(&dataset, store, head, probe.layer_bias)?;
            train_probe(head, function, &train, &test, &probe.train_config(head, function))
        });
        let results: Vec<ProbeResult> = trained.into_iter().collect::<Result<_>>()?;
        let ranking = rank_heads(&results, geometry)?;
        let selected = select_cognitive_heads(&ranking, probe.top_fraction)?;
        outcome.heatmaps.insert(function, HeatmapGrid::from_results(function, geometry, &results)?);
        outcome.results.insert(function, results);
        outcome.rankings.insert(function, ranking);
        outcome.selected.insert(function, selected);
    }
    Ok(outcome)
}

/// Everything probing produces, kept together so interventional
/// experiments can reuse the pool and the head selections.
#[derive(Debug, Clone)]
pub struct ProbingArtifacts {
    pub geometry: ModelGeometry,
    pub records: Vec<SubQAFRecord>,
    pub samples: Vec<SampleActivations>,
    pub label_accuracy: BTreeMap<CognitiveFunction, f64>,
    pub grid: GridOutcome,
}

/// A stable key derived from the seed list, behind dataset balance seeds.
pub fn dataset_key(seeds: &[u64]) -> u64 {
    stable_seed(seeds)
}

/// The full probing pipeline against the desk model: pool suites over the
/// configured seeds, aggregate features, train the grid.
pub fn run_probing(model: &DeskModel, config: &ExperimentConfig) -> Result<ProbingArtifacts> {
    let pool = labelled_pool(model, config)?;
    let store = build_feature_store(
        pool.geometry,
        &pool.records,
        &pool.samples,
        config.probe.answer_tokens,
    )?;
    let grid = probe_grid(
        &pool.records,
        &store,
        &config.target_functions(),
        &config.probe,
        dataset_key(&config.seeds),
    )?;
    Ok(ProbingArtifacts {
        geometry: pool.geometry,
        records: pool.records,
        samples: pool.samples,
        label_accuracy: pool.label_accuracy,
        grid,
    })
}

/// Probing from a pre-recorded dump: same grid, no model runs.
pub fn probe_grid_from_dump(
    dump: &crate::store::ActivationDump,
    records: &[SubQAFRecord],
    config: &ExperimentConfig,
) -> Result<GridOutcome> {
    let selections = selections_for_records(records, config.probe.answer_tokens)?;
    let store = FeatureStore::build(dump, &selections)?;
    probe_grid(records, &store, &config.target_functions(), &config.probe, dataset_key(&config.seeds))
}

// ============================================================================
// Null calibration
// ============================================================================

/// Mean label-shuffled probe accuracy per head (grid-flat, layer-major).
///
/// The dataset plan is built exactly as for real probes; each round then
/// shuffles the train and test labels independently (preserving each
/// split's class balance) before training. With the association between
/// features and labels severed, a calibrated setup scores at chance.
pub fn null_probe_means(
    records: &[SubQAFRecord],
    store: &FeatureStore,
    function: CognitiveFunction,
    probe: &ProbeSettings,
    n_shuffles: usize,
    shuffle_seed: u64,
    dataset_key: u64,
) -> Result<Vec<f64>> {
    if n_shuffles == 0 {
        return Err(Error::Experiment("null calibration needs at least one shuffle".into()));
    }
    let geometry = store.geometry();
    let dataset =
        build_probe_dataset(records, Some(store), function, &dataset_options(probe, dataset_key, function))?;
    let heads: Vec<HeadId> = geometry.heads().collect();
    let mut sums = vec![0.0f64; heads.len()];
    for round in 0..n_shuffles {
        let mut shuffled = dataset.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
            shuffle_seed,
            NULL_TAG,
            function.index() as u64,
            round as u64,
        ]));
        for split in [&mut shuffled.train, &mut shuffled.test] {
            let mut labels: Vec<bool> = split.iter().map(|s| s.positive).collect();
            labels.shuffle(&mut rng);
            for (sample, label) in split.iter_mut().zip(labels) {
                sample.positive = label;
            }
        }
        let accuracies = par_map(&heads, |&head| -> Result<f64> {
            let (train, test) = materialize_head(&shuffled, store, head, probe.layer_bias)?;
            let config = crate::probe::TrainConfig {
                seed: stable_seed(&[probe.train_config(head, function).seed, round as u64]),
                ..probe.train_config(head, function)
            };
            Ok(train_probe(head, function, &train, &test, &config)?.test_accuracy)
        });
        for (sum, acc) in sums.iter_mut().zip(accuracies) {
            *sum += acc?;
        }
    }
    Ok(sums.into_iter().map(|s| s / n_shuffles as f64).collect())
}

/// Size of the balanced dataset (train + test) a function's probes see.
pub fn balanced_dataset_size(dataset: &ProbeDataset) -> usize {
    dataset.train.len() + dataset.test.len()
}

// ============================================================================
// Evaluation under interventions
// ============================================================================

/// Suite seed used for held-out evaluation, derived from an experiment
/// seed so evaluation tasks never coincide with probing tasks.
pub fn evaluation_seed(seed: u64) -> u64 {
    stable_seed(&[seed, EVAL_SUITE_TAG])
}

/// Stable per-sample key for seeded patch draws.
pub fn sample_key(sample_id: &str) -> u64 {
    let parts: Vec<u64> = sample_id.bytes().map(u64::from).collect();
    stable_seed(&parts)
}

/// Shared lookups an intervention stack may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalContext<'a> {
    pub bank: Option<&'a PatchBank>,
    pub directions: Option<&'a BTreeMap<HeadId, SteeringDirection>>,
}

fn stack_for<'a>(
    specs: &'a [&'a InterventionSpec],
    ctx: &EvalContext<'a>,
    sample_id: &str,
) -> Option<InterventionStack<'a>> {
    if specs.is_empty() {
        return None;
    }
    let mut stack = InterventionStack::new(specs.to_vec());
    if let Some(bank) = ctx.bank {
        stack = stack.with_patch_bank(bank);
    }
    if let Some(directions) = ctx.directions {
        stack = stack.with_directions(directions);
    }
    Some(stack.with_sample_key(sample_key(sample_id)))
}

/// Answers for each task under one intervention stack (empty = baseline).
pub fn answers_with_specs(
    model: &DeskModel,
    tasks: &[&SyntheticTask],
    specs: &[&InterventionSpec],
    ctx: &EvalContext<'_>,
) -> Result<Vec<String>> {
    let options = RunOptions::default();
    par_map(tasks, |task| {
        let stack = stack_for(specs, ctx, &task.record.sample_id());
        let out = model.run_with_hooks(&task.prompt, &options, stack.as_ref())?;
        Ok(out.answer_text)
    })
    .into_iter()
    .collect()
}

/// Integrated accuracy of answers against the tasks' gold labels. The
/// embedder is fitted on the evaluated pair corpus itself, so every token
/// involved owns a vocabulary slot and no two distinct answers collide.
pub fn accuracy_against_gold(tasks: &[&SyntheticTask], answers: &[String]) -> Result<f64> {
    if tasks.len() != answers.len() {
        return Err(Error::Experiment(format!(
            "{} answers for {} tasks",
            answers.len(),
            tasks.len()
        )));
    }
    if tasks.is_empty() {
        return Err(Error::Experiment("cannot score an empty task set".into()));
    }
    let pairs: Vec<(String, String)> = tasks
        .iter()
        .zip(answers)
        .map(|(task, answer)| (answer.clone(), task.record.gold_answer.clone()))
        .collect();
    let embedder =
        OfflineEmbedder::from_corpus(pairs.iter().flat_map(|(c, r)| [c.as_str(), r.as_str()]));
    integrated_accuracy(&pairs, &embedder)
}

/// Run and score one arm in a single call.
pub fn evaluate_tasks(
    model: &DeskModel,
    tasks: &[&SyntheticTask],
    specs: &[&InterventionSpec],
    ctx: &EvalContext<'_>,
) -> Result<f64> {
    let answers = answers_with_specs(model, tasks, specs, ctx)?;
    accuracy_against_gold(tasks, &answers)
}

// ============================================================================
// Captures for banks and steering
// ============================================================================

/// One task's outcome under a stack, with the content-deciding head
/// outputs (the first captured token) for the requested heads.
#[derive(Debug, Clone)]
pub struct CapturedRun {
    pub correct: bool,
    pub outputs: BTreeMap<HeadId, Vec<f32>>,
}

/// Run tasks under `specs`, capturing each requested head's output at the
/// answer-deciding position.
pub fn capture_head_outputs(
    model: &DeskModel,
    tasks: &[&SyntheticTask],
    specs: &[&InterventionSpec],
    ctx: &EvalContext<'_>,
    heads: &BTreeSet<HeadId>,
) -> Result<Vec<CapturedRun>> {
    let options = RunOptions::default();
    par_map(tasks, |task| {
        let stack = stack_for(specs, ctx, &task.record.sample_id());
        let out = model.run_with_hooks(&task.prompt, &options, stack.as_ref())?;
        let token = out
            .activations
            .first()
            .ok_or_else(|| Error::Experiment("run captured no tokens".into()))?;
        let outputs = heads
            .iter()
            .map(|&h| (h, token.head_values(h.layer, h.head).to_vec()))
            .collect();
        Ok(CapturedRun { correct: out.answer_text == task.record.gold_answer, outputs })
    })
    .into_iter()
    .collect()
}

/// Build a donor bank: for every `(source function, target heads)` entry,
/// run that function's tasks unintervened and pool each target head's
/// answer-position outputs.
pub fn build_patch_bank(
    model: &DeskModel,
    suite: &TaskSuite,
    needs: &BTreeMap<CognitiveFunction, BTreeSet<HeadId>>,
) -> Result<PatchBank> {
    let mut bank = PatchBank::new(model.geometry().head_dim);
    for (&function, heads) in needs {
        let tasks = suite.function_tasks(function);
        if tasks.is_empty() {
            return Err(Error::Experiment(format!(
                "donor suite has no {function} tasks to draw from"
            )));
        }
        let runs = capture_head_outputs(model, &tasks, &[], &EvalContext::default(), heads)?;
        for run in runs {
            for (head, output) in run.outputs {
                bank.add(function, head, output)?;
            }
        }
    }
    bank.finalize();
    Ok(bank)
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk::{build_desk_model, DeskModelConfig};
    use crate::exp::config::ExperimentKind;

    fn small_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::new(ExperimentKind::Probing, 11, "/tmp/unused");
        config.seeds = vec![1, 2];
        config.suite.n_per_function = 16;
        config.probe.min_positives = 8;
        config
    }

    fn model() -> DeskModel {
        build_desk_model(&DeskModelConfig::new(11)).unwrap()
    }

    #[test]
    fn pool_carries_one_sample_per_record() {
        let model = model();
        let config = small_config();
        let pool = labelled_pool(&model, &config).unwrap();
        assert_eq!(pool.records.len(), pool.samples.len());
        assert_eq!(pool.records.len(), 2 * 8 * 16);
        for record in &pool.records {
            assert!(record.model_correct.is_some());
        }
    }

    #[test]
    fn probing_puts_planted_heads_on_top() {
        let model = model();
        let config = small_config();
        let artifacts = run_probing(&model, &config).unwrap();
        for (&function, &planted) in model.planted_heads() {
            let ranking = &artifacts.grid.rankings[&function];
            let top = ranking[0].0;
            assert_eq!(top, planted, "{function}: expected {planted}, ranking {ranking:?}");
            assert!(ranking[0].1 >= 0.9, "{function}: top accuracy {}", ranking[0].1);
        }
    }

    #[test]
    fn null_calibration_sits_at_chance() {
        let model = model();
        let config = small_config();
        let pool = labelled_pool(&model, &config).unwrap();
        let store =
            build_feature_store(pool.geometry, &pool.records, &pool.samples, 1).unwrap();
        let means = null_probe_means(
            &pool.records,
            &store,
            CognitiveFunction::LowLevelVisual,
            &config.probe,
            6,
            0,
            dataset_key(&config.seeds),
        )
        .unwrap();
        for (i, mean) in means.iter().enumerate() {
            assert!((0.38..=0.62).contains(mean), "head {i} null mean {mean}");
        }
    }

    #[test]
    fn evaluating_with_no_specs_matches_label_accuracy() {
        let model = model();
        let config = small_config();
        let mut suite = generate_task_suite(&config.suite_config(3)).unwrap();
        run_and_capture(&model, &mut suite, false).unwrap();
        let function = CognitiveFunction::LanguageKnowledgeRecall;
        let tasks = suite.function_tasks(function);
        let accuracy = evaluate_tasks(&model, &tasks, &[], &EvalContext::default()).unwrap();
        let exact = tasks.iter().filter(|t| t.record.model_correct == Some(true)).count() as f64
            / tasks.len() as f64;
        assert_eq!(accuracy, exact);
    }

    #[test]
    fn bank_pools_cover_requested_heads() {
        let model = model();
        let config = small_config();
        let suite = generate_task_suite(&config.suite_config(5)).unwrap();
        let function = CognitiveFunction::MathReasoning;
        let head = model.planted_heads()[&CognitiveFunction::DecisionMaking];
        let mut needs = BTreeMap::new();
        needs.insert(function, BTreeSet::from([head]));
        let bank = build_patch_bank(&model, &suite, &needs).unwrap();
        assert_eq!(bank.pool(function, head).unwrap().len(), 16);
        assert_eq!(bank.mean(function, head).unwrap().len(), model.geometry().head_dim);
    }

    #[test]
    fn sample_keys_differ_across_samples_and_stay_stable() {
        assert_eq!(sample_key("s1-llv-0#0"), sample_key("s1-llv-0#0"));
        assert_ne!(sample_key("s1-llv-0#0"), sample_key("s1-llv-1#0"));
    }
}
