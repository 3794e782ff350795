//! Assembling balanced probe datasets from answered subquestions.
//!
//! A probe for function f learns to tell f's activations apart from every
//! other function's. Only correctly answered subquestions participate:
//! positives are correct answers to f-subquestions, negatives are correct
//! answers to the rest, subsampled to match the positive count. The
//! train/test split is drawn over main questions, never over individual
//! subquestions, because siblings share context and would leak.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeds::stable_seed;
use crate::store::FeatureStore;
use crate::types::{CognitiveFunction, HeadId, SubQAFRecord};

/// Knobs for dataset assembly. The defaults mirror common usage; seeds are
/// always explicit so two runs agree byte-for-byte.
#[derive(Debug, Clone)]
pub struct DatasetOptions {
    /// Fraction of main questions assigned to the held-out split.
    pub test_fraction: f64,
    /// Minimum number of correct positives required overall.
    pub min_positives: usize,
    /// Seed controlling both the split and the negative subsample.
    pub balance_seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> DatasetOptions {
        DatasetOptions { test_fraction: 0.2, min_positives: 10, balance_seed: 0 }
    }
}

/// One labelled example: which sample, and whether it is the target class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelledSample {
    pub sample_id: String,
    pub positive: bool,
}

/// The sample-level plan for one function's probes. Features are attached
/// per head later, so the (expensive-to-balance) plan is shared by every
/// head in the grid.
#[derive(Debug, Clone)]
pub struct ProbeDataset {
    pub target: CognitiveFunction,
    pub train: Vec<LabelledSample>,
    pub test: Vec<LabelledSample>,
}

/// Domain tag separating the split shuffle from the subsample draws.
const SPLIT_TAG: u64 = 0x73_70_6c_69_74; // "split"

/// Deterministically split main-question ids: shuffle the sorted unique ids
/// with the derived seed, then cut the tail `test_fraction` off as test.
pub fn split_main_questions(
    question_ids: &[&str],
    test_fraction: f64,
    balance_seed: u64,
) -> (Vec<String>, Vec<String>) {
    let mut unique: Vec<String> = question_ids.iter().map(|s| s.to_string()).collect();
    unique.sort();
    unique.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[balance_seed, SPLIT_TAG]));
    unique.shuffle(&mut rng);
    let n_test = (unique.len() as f64 * test_fraction).round() as usize;
    let n_test = n_test.min(unique.len());
    let test = unique.split_off(unique.len() - n_test);
    (unique, test)
}

/// Build the balanced train/test plan for `target`.
///
/// Records must carry `model_correct`; anything not answered correctly (or
/// missing from the feature store, when one is supplied) is ignored.
pub fn build_probe_dataset(
    records: &[SubQAFRecord],
    features: Option<&FeatureStore>,
    target: CognitiveFunction,
    options: &DatasetOptions,
) -> Result<ProbeDataset> {
    if !(0.0..1.0).contains(&options.test_fraction) || options.test_fraction <= 0.0 {
        return Err(Error::Probe(format!(
            "test_fraction must lie in (0, 1), got {}",
            options.test_fraction
        )));
    }
    let usable: Vec<&SubQAFRecord> = records
        .iter()
        .filter(|r| r.model_correct == Some(true))
        .filter(|r| features.map_or(true, |f| f.contains(&r.sample_id())))
        .collect();

    let n_positive = usable.iter().filter(|r| r.function == target).count();
    if n_positive < options.min_positives {
        return Err(Error::Probe(format!(
            "{target}: {n_positive} correct positives, need at least {}",
            options.min_positives
        )));
    }

    let qids: Vec<&str> = usable.iter().map(|r| r.main_question_id.as_str()).collect();
    let (_, test_qids) =
        split_main_questions(&qids, options.test_fraction, options.balance_seed);
    let test_qids: std::collections::BTreeSet<String> = test_qids.into_iter().collect();
    let in_test = |qid: &str| test_qids.contains(qid);

    let mut dataset = ProbeDataset { target, train: Vec::new(), test: Vec::new() };
    for (split_is_test, split) in [(false, &mut dataset.train), (true, &mut dataset.test)] {
        let members: Vec<&&SubQAFRecord> = usable
            .iter()
            .filter(|r| in_test(&r.main_question_id) == split_is_test)
            .collect();
        let positives: Vec<String> = members
            .iter()
            .filter(|r| r.function == target)
            .map(|r| r.sample_id())
            .collect();
        let negatives: Vec<String> = members
            .iter()
            .filter(|r| r.function != target)
            .map(|r| r.sample_id())
            .collect();
        let n = positives.len().min(negatives.len());
        if n == 0 {
            return Err(Error::Probe(format!(
                "{target}: {} split has {} positives and {} negatives; cannot balance",
                if split_is_test { "test" } else { "train" },
                positives.len(),
                negatives.len()
            )));
        }
        let tag = if split_is_test { 1u64 } else { 0u64 };
        let positives = subsample(positives, n, stable_seed(&[options.balance_seed, 1, tag]));
        let negatives = subsample(negatives, n, stable_seed(&[options.balance_seed, 2, tag]));
        split.extend(
            positives.into_iter().map(|sample_id| LabelledSample { sample_id, positive: true }),
        );
        split.extend(
            negatives.into_iter().map(|sample_id| LabelledSample { sample_id, positive: false }),
        );
    }
    Ok(dataset)
}

/// Uniform subsample without replacement, deterministic in `seed`. Input is
/// sorted first so record order on disk cannot change the draw.
fn subsample(mut ids: Vec<String>, n: usize, seed: u64) -> Vec<String> {
    ids.sort();
    if ids.len() == n {
        return ids;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<String> =
        ids.choose_multiple(&mut rng, n).cloned().collect();
    chosen.sort();
    chosen
}

/// Per-head feature matrix for one split.
#[derive(Debug, Clone)]
pub struct HeadExamples {
    pub features: Vec<Vec<f32>>,
    pub labels: Vec<bool>,
}

/// Attach one head's features to the dataset plan. `layer_bias` selects the
/// augmented feature (head mean ++ layer mean) or the head mean alone.
pub fn materialize_head(
    dataset: &ProbeDataset,
    store: &FeatureStore,
    head: HeadId,
    layer_bias: bool,
) -> Result<(HeadExamples, HeadExamples)> {
    let mut out = Vec::with_capacity(2);
    for split in [&dataset.train, &dataset.test] {
        let mut features = Vec::with_capacity(split.len());
        let mut labels = Vec::with_capacity(split.len());
        for sample in split {
            let feature = store.head_feature(&sample.sample_id, head).ok_or_else(|| {
                Error::Probe(format!(
                    "sample {:?} missing features for head {head}",
                    sample.sample_id
                ))
            })?;
            features.push(if layer_bias { feature.augmented() } else { feature.base.clone() });
            labels.push(sample.positive);
        }
        out.push(HeadExamples { features, labels });
    }
    let test = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn record(qid: &str, step: usize, f: CognitiveFunction, correct: bool) -> SubQAFRecord {
        SubQAFRecord {
            main_question_id: qid.into(),
            step_index: step,
            subquestion: format!("q {qid} {step}"),
            gold_answer: "a".into(),
            function: f,
            model_answer: Some("a".into()),
            model_correct: Some(correct),
        }
    }

    fn synthetic_records(n_questions: usize, per_question: usize) -> Vec<SubQAFRecord> {
        let mut records = Vec::new();
        for q in 0..n_questions {
            for s in 0..per_question {
                let f = CognitiveFunction::ALL[(q * per_question + s) % 8];
                records.push(record(&format!("q{q:04}"), s, f, true));
            }
        }
        records
    }

    #[test]
    fn split_sizes_follow_fraction_over_main_questions() {
        // 1409 main questions at the fraction 285/1409 must land exactly
        // 1124 train / 285 test questions.
        let qids: Vec<String> = (0..1409).map(|i| format!("q{i:05}")).collect();
        let refs: Vec<&str> = qids.iter().map(|s| s.as_str()).collect();
        let (train, test) = split_main_questions(&refs, 285.0 / 1409.0, 9);
        assert_eq!(train.len(), 1124);
        assert_eq!(test.len(), 285);
        let all: BTreeSet<&String> = train.iter().chain(test.iter()).collect();
        assert_eq!(all.len(), 1409);
    }

    #[test]
    fn no_main_question_straddles_splits() {
        let records = synthetic_records(40, 8);
        let target = CognitiveFunction::MathReasoning;
        let dataset =
            build_probe_dataset(&records, None, target, &DatasetOptions::default()).unwrap();
        let qid_of = |sid: &str| sid.split('#').next().unwrap().to_string();
        let train_qids: BTreeSet<String> =
            dataset.train.iter().map(|s| qid_of(&s.sample_id)).collect();
        let test_qids: BTreeSet<String> =
            dataset.test.iter().map(|s| qid_of(&s.sample_id)).collect();
        assert!(train_qids.is_disjoint(&test_qids));
        assert!(!dataset.train.is_empty() && !dataset.test.is_empty());
    }

    #[test]
    fn splits_are_balanced() {
        let records = synthetic_records(60, 8);
        for target in CognitiveFunction::ALL {
            let dataset =
                build_probe_dataset(&records, None, target, &DatasetOptions::default()).unwrap();
            for split in [&dataset.train, &dataset.test] {
                let pos = split.iter().filter(|s| s.positive).count();
                assert_eq!(pos * 2, split.len(), "{target}: unbalanced split");
            }
        }
    }

    #[test]
    fn negative_subsample_matches_positive_count_and_reproduces() {
        // 30 positive-bearing questions vs ten times as many negatives.
        let mut records = Vec::new();
        for q in 0..30 {
            records.push(record(&format!("p{q:03}"), 0, CognitiveFunction::Inference, true));
        }
        for q in 0..300 {
            records.push(record(&format!("n{q:03}"), 0, CognitiveFunction::LowLevelVisual, true));
        }
        let options = DatasetOptions { test_fraction: 0.2, ..DatasetOptions::default() };
        let a = build_probe_dataset(&records, None, CognitiveFunction::Inference, &options)
            .unwrap();
        let b = build_probe_dataset(&records, None, CognitiveFunction::Inference, &options)
            .unwrap();
        let count = |split: &[LabelledSample], positive: bool| {
            split.iter().filter(|s| s.positive == positive).count()
        };
        assert_eq!(
            count(&a.train, true) + count(&a.test, true),
            count(&a.train, false) + count(&a.test, false),
        );
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn incorrect_records_are_excluded() {
        let mut records = synthetic_records(40, 8);
        // Flip one function's records to incorrect; it can no longer probe.
        for r in records.iter_mut() {
            if r.function == CognitiveFunction::DecisionMaking {
                r.model_correct = Some(false);
            }
        }
        let err = build_probe_dataset(
            &records,
            None,
            CognitiveFunction::DecisionMaking,
            &DatasetOptions::default(),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("positives"), "{err}");
        // Other functions still build, and none of their negatives are the
        // incorrect records.
        let dataset = build_probe_dataset(
            &records,
            None,
            CognitiveFunction::Inference,
            &DatasetOptions::default(),
        )
        .unwrap();
        let banned: BTreeSet<String> = records
            .iter()
            .filter(|r| r.model_correct == Some(false))
            .map(|r| r.sample_id())
            .collect();
        for s in dataset.train.iter().chain(dataset.test.iter()) {
            assert!(!banned.contains(&s.sample_id));
        }
    }

    #[test]
    fn zero_positives_errors() {
        let records: Vec<SubQAFRecord> = (0..40)
            .map(|q| record(&format!("q{q}"), 0, CognitiveFunction::LowLevelVisual, true))
            .collect();
        assert!(build_probe_dataset(
            &records,
            None,
            CognitiveFunction::MathReasoning,
            &DatasetOptions::default(),
        )
        .is_err());
    }

    #[test]
    fn different_seed_changes_split() {
        let records = synthetic_records(60, 8);
        let target = CognitiveFunction::HighLevelVisual;
        let a = build_probe_dataset(
            &records,
            None,
            target,
            &DatasetOptions { balance_seed: 1, ..DatasetOptions::default() },
        )
        .unwrap();
        let b = build_probe_dataset(
            &records,
            None,
            target,
            &DatasetOptions { balance_seed: 2, ..DatasetOptions::default() },
        )
        .unwrap();
        assert_ne!(a.train, b.train);
    }
}
