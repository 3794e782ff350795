//! Synthetic task suites for the desk model.
//!
//! Three task families cover the eight functions: five single-symbol copy
//! tasks (one per copy function), a marker-counting task, and two five-vote
//! majority tasks.  Every prompt uses the same 30-token frame with a visual
//! and a textual content region; a function's content always sits in the
//! region matching its modality.  A configurable share of tasks come as
//! two-step chains: the first step is a copy task and the second step's
//! votes are derived from the first answer's symbol parity, with that answer
//! embedded verbatim in the second prompt.
//!
//! Generation is a pure function of the configuration: every random draw
//! comes from a per-task seeded generator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::desk::model::{chance_level, task_family, DeskModel, RunOptions, TaskFamily};
use crate::desk::vocab::{
    DeskVocab, TokenKind, NULL_NAME, NUM_DECOYS, NUM_FILLERS, NUM_SYMBOLS, PROMPT_LEN,
    TEXTUAL_SLOTS, VISUAL_SLOTS,
};
use crate::error::{Error, Result};
use crate::types::{write_subqaf_jsonl, CognitiveFunction, SubQAFRecord};

const TASK_TAG: u64 = 0x7461_736b;
const CHAIN_TAG: u64 = 0x6368_6169;

// ============================================================================
// Configuration
// ============================================================================

/// Suite shape: how many tasks per function and how many of them chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub n_per_function: usize,
    pub seed: u64,
    /// Fraction of each chained function's tasks that form two-step chains.
    pub chain_fraction: f64,
}

impl SuiteConfig {
    pub fn new(n_per_function: usize, seed: u64) -> SuiteConfig {
        SuiteConfig { n_per_function, seed, chain_fraction: 0.2 }
    }
}

/// Sidecar metadata describing the generated suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteMeta {
    pub seed: u64,
    pub n_per_function: usize,
    pub chain_fraction: f64,
    pub n_chains: usize,
    /// Task-family rule per function, in plain words.
    pub families: BTreeMap<String, String>,
    /// Uniform-guessing accuracy per function.
    pub chance: BTreeMap<String, f64>,
}

// ============================================================================
// Tasks
// ============================================================================

/// How a chained second step is rebuilt from a first-step answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainRule {
    /// Sample id of the first step whose answer feeds this prompt.
    pub source_sample: String,
    /// Prompt position holding the embedded first-step answer.
    pub embed_pos: usize,
    /// Positions of the five votes; the first three carry the majority.
    pub vote_positions: Vec<usize>,
    /// Whether the votes use weak-emphasis tokens.
    pub weak: bool,
}

/// One generated task: its record, its prompt, and (for chained second
/// steps) the rule rebuilding the prompt from a new upstream answer.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub record: SubQAFRecord,
    pub prompt: Vec<String>,
    pub chain: Option<ChainRule>,
}

/// A full generated suite.
#[derive(Debug, Clone)]
pub struct TaskSuite {
    pub tasks: Vec<SyntheticTask>,
    pub meta: SuiteMeta,
}

impl TaskSuite {
    /// Clone out the records (e.g. for probing datasets).
    pub fn records(&self) -> Vec<SubQAFRecord> {
        self.tasks.iter().map(|t| t.record.clone()).collect()
    }

    /// Tasks belonging to one function.
    pub fn function_tasks(&self, function: CognitiveFunction) -> Vec<&SyntheticTask> {
        self.tasks.iter().filter(|t| t.record.function == function).collect()
    }
}

/// Join prompt tokens into the record's question text.
pub fn prompt_text(prompt: &[String]) -> String {
    prompt.join(" ")
}

// ============================================================================
// Generation
// ============================================================================

/// Generate a deterministic task suite: `n_per_function` tasks for each of
/// the eight functions, a share of which pair up into two-step chains
/// between the copy function `language_info_extraction` and the majority
/// function `decision_making`.
pub fn generate_task_suite(config: &SuiteConfig) -> Result<TaskSuite> {
    if config.n_per_function == 0 {
        return Err(Error::Desk("suite needs at least one task per function".into()));
    }
    if !(0.0..=1.0).contains(&config.chain_fraction) {
        return Err(Error::Desk(format!(
            "chain fraction {} outside [0, 1]",
            config.chain_fraction
        )));
    }
    let vocab = DeskVocab::build();
    let n = config.n_per_function;
    let n_chains = ((n as f64) * config.chain_fraction).round() as usize;

    let mut tasks = Vec::new();
    for &function in CognitiveFunction::ALL.iter() {
        let chained = matches!(
            function,
            CognitiveFunction::LanguageInfoExtraction | CognitiveFunction::DecisionMaking
        );
        let n_plain = if chained { n - n_chains } else { n };
        for i in 0..n_plain {
            let mut rng = ChaCha8Rng::seed_from_u64(stable_task_seed(config.seed, function, i));
            let qid = format!("s{}-{}-{}", config.seed, function.code(), i);
            tasks.push(generate_plain(&vocab, function, &qid, &mut rng));
        }
    }
    for i in 0..n_chains {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::stable_seed(&[
            config.seed,
            CHAIN_TAG,
            i as u64,
        ]));
        let qid = format!("s{}-chain-{}", config.seed, i);
        let (step1, step2) = generate_chain(&vocab, &qid, &mut rng);
        tasks.push(step1);
        tasks.push(step2);
    }

    let mut families = BTreeMap::new();
    let mut chance = BTreeMap::new();
    for &function in CognitiveFunction::ALL.iter() {
        let rule = match task_family(function) {
            TaskFamily::Copy => {
                "answer the single payload symbol planted in the function's region"
            }
            TaskFamily::Count => "answer the number of marker tokens in the textual region",
            TaskFamily::Majority => "answer the option holding more of the five votes",
        };
        families.insert(function.code().to_string(), rule.to_string());
        chance.insert(function.code().to_string(), chance_level(function));
    }
    let meta = SuiteMeta {
        seed: config.seed,
        n_per_function: n,
        chain_fraction: config.chain_fraction,
        n_chains,
        families,
        chance,
    };
    Ok(TaskSuite { tasks, meta })
}

fn stable_task_seed(seed: u64, function: CognitiveFunction, index: usize) -> u64 {
    crate::seeds::stable_seed(&[seed, TASK_TAG, function.index() as u64, index as u64])
}

/// All content slot positions (both regions).
fn all_slots() -> Vec<usize> {
    VISUAL_SLOTS.chain(TEXTUAL_SLOTS).collect()
}

/// The region a function's content lives in.
fn region_slots(function: CognitiveFunction) -> Vec<usize> {
    if function.is_vision() {
        VISUAL_SLOTS.collect()
    } else {
        TEXTUAL_SLOTS.collect()
    }
}

/// Fill the fixed frame, placing `content` tokens and random fillers.
fn assemble(
    rng: &mut ChaCha8Rng,
    content: &BTreeMap<usize, String>,
    function: CognitiveFunction,
) -> Vec<String> {
    let mut prompt = Vec::with_capacity(PROMPT_LEN);
    for pos in 0..PROMPT_LEN {
        let token = if let Some(t) = content.get(&pos) {
            t.clone()
        } else {
            match pos {
                0 => "<bos>".to_string(),
                1 => "<vis>".to_string(),
                14 => "</vis>".to_string(),
                15 => "<txt>".to_string(),
                28 => "</txt>".to_string(),
                29 => format!("ask_{}", function.code()),
                _ => format!("pad_{}", rng.gen_range(0..NUM_FILLERS)),
            }
        };
        prompt.push(token);
    }
    prompt
}

/// Sprinkle two decoy tokens into free slots.
fn add_decoys(rng: &mut ChaCha8Rng, content: &mut BTreeMap<usize, String>) {
    let taken: BTreeSet<usize> = content.keys().copied().collect();
    let free: Vec<usize> = all_slots().into_iter().filter(|p| !taken.contains(p)).collect();
    let slots: Vec<usize> = free.choose_multiple(rng, 2).copied().collect();
    for slot in slots {
        content.insert(slot, format!("decoy_{}", rng.gen_range(0..NUM_DECOYS)));
    }
}

fn make_record(qid: &str, step_index: usize, prompt: &[String], gold: &str, function: CognitiveFunction) -> SubQAFRecord {
    SubQAFRecord {
        main_question_id: qid.to_string(),
        step_index,
        subquestion: prompt_text(prompt),
        gold_answer: gold.to_string(),
        function,
        model_answer: None,
        model_correct: None,
    }
}

fn generate_plain(
    vocab: &DeskVocab,
    function: CognitiveFunction,
    qid: &str,
    rng: &mut ChaCha8Rng,
) -> SyntheticTask {
    let mut content = BTreeMap::new();
    let gold = match task_family(function) {
        TaskFamily::Copy => {
            let index = rng.gen_range(0..NUM_SYMBOLS);
            let weak = rng.gen_bool(0.5);
            let region = region_slots(function);
            let payload = *region.choose(rng).expect("region has slots");
            content.insert(payload, vocab.symbol_name(function, index, weak));
            vocab.symbol_name(function, index, false)
        }
        TaskFamily::Count => {
            let k = rng.gen_range(1..=9usize);
            let slots: Vec<usize> =
                TEXTUAL_SLOTS.collect::<Vec<_>>().choose_multiple(rng, k).copied().collect();
            for slot in slots {
                content.insert(slot, "mark".to_string());
            }
            vocab.digit_name(k)
        }
        TaskFamily::Majority => {
            let weak = rng.gen_bool(0.5);
            let slots: Vec<usize> =
                TEXTUAL_SLOTS.collect::<Vec<_>>().choose_multiple(rng, 5).copied().collect();
            let votes: Vec<bool> = (0..5).map(|_| rng.gen_bool(0.5)).collect();
            for (&slot, &second) in slots.iter().zip(votes.iter()) {
                content.insert(slot, vocab.vote_name(function, second, weak));
            }
            let majority_second = votes.iter().filter(|&&v| v).count() >= 3;
            vocab.vote_name(function, majority_second, false)
        }
    };
    add_decoys(rng, &mut content);
    let prompt = assemble(rng, &content, function);
    let record = make_record(qid, 0, &prompt, &gold, function);
    SyntheticTask { record, prompt, chain: None }
}

/// A chain: step one copies a symbol, step two holds a majority vote whose
/// outcome is the parity of that symbol's index.  The first-step answer is
/// embedded verbatim in the second prompt.
fn generate_chain(
    vocab: &DeskVocab,
    qid: &str,
    rng: &mut ChaCha8Rng,
) -> (SyntheticTask, SyntheticTask) {
    let step1_fn = CognitiveFunction::LanguageInfoExtraction;
    let step2_fn = CognitiveFunction::DecisionMaking;

    // Step one: a plain copy task.
    let index = rng.gen_range(0..NUM_SYMBOLS);
    let weak1 = rng.gen_bool(0.5);
    let region = region_slots(step1_fn);
    let payload = *region.choose(rng).expect("region has slots");
    let mut content1 = BTreeMap::new();
    content1.insert(payload, vocab.symbol_name(step1_fn, index, weak1));
    let gold1 = vocab.symbol_name(step1_fn, index, false);
    add_decoys(rng, &mut content1);
    let prompt1 = assemble(rng, &content1, step1_fn);
    let record1 = make_record(qid, 0, &prompt1, &gold1, step1_fn);
    let step1 = SyntheticTask { record: record1, prompt: prompt1, chain: None };

    // Step two: votes follow the parity of the upstream symbol index.
    let weak2 = rng.gen_bool(0.5);
    let textual: Vec<usize> = TEXTUAL_SLOTS.collect();
    let picks: Vec<usize> = textual.choose_multiple(rng, 6).copied().collect();
    let embed_pos = picks[0];
    let vote_positions: Vec<usize> = picks[1..].to_vec();
    let majority_second = index % 2 == 1;
    let mut content2 = BTreeMap::new();
    content2.insert(embed_pos, gold1.clone());
    for (j, &pos) in vote_positions.iter().enumerate() {
        let second = if j < 3 { majority_second } else { !majority_second };
        content2.insert(pos, vocab.vote_name(step2_fn, second, weak2));
    }
    let gold2 = vocab.vote_name(step2_fn, majority_second, false);
    add_decoys(rng, &mut content2);
    let prompt2 = assemble(rng, &content2, step2_fn);
    let record2 = make_record(qid, 1, &prompt2, &gold2, step2_fn);
    let chain = ChainRule {
        source_sample: step1.record.sample_id(),
        embed_pos,
        vote_positions,
        weak: weak2,
    };
    let step2 = SyntheticTask { record: record2, prompt: prompt2, chain: Some(chain) };
    (step1, step2)
}

/// Rebuild a chained second-step prompt from an upstream answer: the
/// embedded token is replaced and the votes are recomputed from the
/// answer's symbol parity.  Non-symbol answers (including the refusal
/// token) default to symbol zero.
pub fn materialize_chain(
    task: &SyntheticTask,
    vocab: &DeskVocab,
    upstream_answer: &str,
) -> Result<Vec<String>> {
    let rule = task
        .chain
        .as_ref()
        .ok_or_else(|| Error::Desk(format!("task {} has no chain rule", task.record.sample_id())))?;
    let word = upstream_answer.split_whitespace().next().unwrap_or("");
    let (embed_token, index) = match vocab.id(word) {
        Ok(id) => {
            let index = match *vocab.kind(id) {
                TokenKind::Symbol {
                    function: CognitiveFunction::LanguageInfoExtraction, index, ..
                } => index,
                _ => 0,
            };
            (word.to_string(), index)
        }
        Err(_) => (NULL_NAME.to_string(), 0),
    };
    let majority_second = index % 2 == 1;
    let step2_fn = CognitiveFunction::DecisionMaking;
    let mut prompt = task.prompt.clone();
    prompt[rule.embed_pos] = embed_token;
    for (j, &pos) in rule.vote_positions.iter().enumerate() {
        let second = if j < 3 { majority_second } else { !majority_second };
        prompt[pos] = vocab.vote_name(step2_fn, second, rule.weak);
    }
    Ok(prompt)
}

// ============================================================================
// Running and labelling
// ============================================================================

/// Run every task unintervened, filling `model_answer`/`model_correct` by
/// exact string match; returns overall accuracy.
pub fn label_suite(model: &DeskModel, suite: &mut TaskSuite) -> Result<f64> {
    let options = RunOptions::default();
    let mut correct = 0usize;
    for task in suite.tasks.iter_mut() {
        let out = model.run_with_hooks(&task.prompt, &options, None)?;
        let ok = out.answer_text == task.record.gold_answer;
        task.record.model_answer = Some(out.answer_text);
        task.record.model_correct = Some(ok);
        if ok {
            correct += 1;
        }
    }
    Ok(correct as f64 / suite.tasks.len() as f64)
}

/// Accuracy over a set of labelled records (unlabelled count as wrong).
pub fn labelled_accuracy(records: &[SubQAFRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let correct = records.iter().filter(|r| r.model_correct == Some(true)).count();
    correct as f64 / records.len() as f64
}

/// Write `suite.jsonl` plus the `tasks.meta.json` sidecar under `dir`.
pub fn write_suite(dir: &Path, suite: &TaskSuite) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    let records = suite.records();
    write_subqaf_jsonl(&dir.join("suite.jsonl"), &records)?;
    let meta_path = dir.join("tasks.meta.json");
    let mut body = serde_json::to_string_pretty(&suite.meta)?;
    body.push('\n');
    std::fs::write(&meta_path, body)
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    Ok(())
}

// ============================================================================
// Tests
// ============================================================================
