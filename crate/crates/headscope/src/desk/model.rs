//! The desk model: a miniature attention-only transformer with analytically
//! planted heads.
//!
//! Every weight is written down in closed form, so the model's behaviour on
//! its synthetic task suite is known exactly: each task family's answer is
//! carried by exactly one planted head, the remaining heads are either
//! constant (noise) or inject small seeded jitter, and the readout emits a
//! dedicated refusal token whenever no task signal reaches the final
//! position.  That gives ground truth for probing, masking, patching, and
//! steering: suppress a planted head and its function's accuracy collapses
//! to the refusal token; every other head is provably irrelevant.
//!
//! The model is attention-only (no layer norm, no MLP), decodes greedily,
//! and recomputes the full sequence every generation step; there is no KV
//! cache, so interventions keyed by absolute position stay self-consistent
//! across steps.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::desk::vocab::{
    ChannelLayout, DeskVocab, TokenId, TokenKind, BLOCK_WIDTH, EOS_NAME, NUM_FILLERS, NUM_SYMBOLS,
    PRESENCE_IDX, PROMPT_LEN,
};
use crate::error::{Error, Result};
use crate::intervene::{InterventionStack, PositionRole};
use crate::seeds::stable_seed;
use crate::store::{SampleActivations, TokenActivations};
use crate::types::{CognitiveFunction, HeadId, ModelGeometry};

// ============================================================================
// Calibration constants
// ============================================================================

/// Gain on the rank-one query projections.
const Q_GAIN: f32 = 50.0;
/// Attention logit a planted head places on its own content tokens.
const FOCUS_LOGIT: f64 = 25.0;
/// Value gain on copy-family symbol channels.
const V_COPY: f32 = 120.0;
/// Value gain on majority-family vote channels.
const V_VOTE: f32 = 120.0;
/// Value gain on the count channel.
const V_COUNT: f32 = 20.0;
/// Readout weight on a symbol identity coordinate.
const R_SYMBOL: f32 = 2.0 / V_COPY;
/// Readout weight on a copy-family presence coordinate.
const R_PRESENCE: f32 = 0.8 / V_COPY;
/// Readout weight on a majority-family vote-sign coordinate.
const R_VOTE: f32 = 7.0 / V_VOTE;
/// Readout weight on a majority-family presence coordinate.
const R_VOTE_PRESENCE: f32 = R_VOTE / 5.0;
/// Constant logit of the refusal token.
const NULL_LOGIT: f32 = 1.6;
/// Readout weight on the content-emitted coordinate for the end token.
const EOS_GAIN: f32 = 100.0;
/// Value-channel scale of weak-emphasis tokens.
pub const WEAK_SCALE: f32 = 0.6;
/// Log-odds boost count markers get over background positions.
const COUNT_FOCUS: f64 = std::f64::consts::LN_2;
/// First count-readout slope and per-digit increment.
const COUNT_SLOPE_BASE: f64 = 2.2;
const COUNT_SLOPE_STEP: f64 = 0.8;
/// Count-readout logit for a count of one.
const COUNT_TARGET: f64 = 2.4;
/// Scale of the jitter head's zero-sum write into presence channels.
/// Calibrated so only weak-emphasis samples whose payload sits very early
/// in its region (concentrated filler histogram) can flip to the refusal
/// token: a few percent of tasks, enough for seed-to-seed variance without
/// letting the jitter head move any function's accuracy materially.
const JITTER_SCALE: f32 = 0.15;
/// Scale of the constant heads' value output.
const NOISE_GAIN: f32 = 3.0;

// ============================================================================
// Configuration
// ============================================================================

/// Configuration for building a desk model.
#[derive(Debug, Clone)]
pub struct DeskModelConfig {
    pub geometry: ModelGeometry,
    /// Seed for the noise-head patterns and the jitter mixing weights.
    pub seed: u64,
    /// Which head carries each function; must be distinct and in-grid.
    pub planted: BTreeMap<CognitiveFunction, HeadId>,
}

impl DeskModelConfig {
    /// The standard 4-layer, 4-head, 16-dim desk geometry.
    pub fn new(seed: u64) -> DeskModelConfig {
        let geometry = ModelGeometry::new(4, 4, 16);
        let planted = default_planted_map(geometry);
        DeskModelConfig { geometry, seed, planted }
    }
}

impl Default for DeskModelConfig {
    fn default() -> Self {
        DeskModelConfig::new(0)
    }
}

/// Spread the eight functions over the grid column-by-column: function `f`
/// lands on layer `f % n_layers`, head slot `f / n_layers`.
pub fn default_planted_map(geometry: ModelGeometry) -> BTreeMap<CognitiveFunction, HeadId> {
    CognitiveFunction::ALL
        .iter()
        .map(|&f| {
            let idx = f.index();
            (f, HeadId::new(idx % geometry.n_layers, idx / geometry.n_layers))
        })
        .collect()
}

/// What a head in the grid does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadRole {
    /// Sole carrier of one function's task signal.
    Planted(CognitiveFunction),
    /// Writes small seeded noise into copy-family presence channels.
    Jitter,
    /// Attends the start token and emits a constant vector.
    Noise,
}

// ============================================================================
// Head weights
// ============================================================================

/// One attention head's weights, stored in the sparse form the analytic
/// construction produces.  The query and key projections are rank one; the
/// value and output projections touch only a handful of coordinates.
#[derive(Debug, Clone, Default)]
struct HeadWeights {
    /// Residual read vector behind the query projection.
    query_read: Vec<f32>,
    /// Residual read vector behind the key projection.
    key_read: Vec<f32>,
    /// Value projection entries: `(head_coord, residual_coord, weight)`.
    value: Vec<(usize, usize, f32)>,
    /// Output projection entries: `(residual_coord, head_coord, weight)`.
    output: Vec<(usize, usize, f32)>,
}

// ============================================================================
// Model
// ============================================================================

/// A fully constructed desk model.
pub struct DeskModel {
    config: DeskModelConfig,
    vocab: DeskVocab,
    /// Token embeddings, `vocab × d_model`.
    embed: Vec<Vec<f32>>,
    /// Readout rows, `vocab × d_model`.
    unembed: Vec<Vec<f32>>,
    /// `[layer][head]` weights.
    heads: Vec<Vec<HeadWeights>>,
    roles: BTreeMap<HeadId, HeadRole>,
    jitter: Option<HeadId>,
    eos: TokenId,
    attn_scale: f32,
}

/// Build a desk model from its configuration.
pub fn build_desk_model(config: &DeskModelConfig) -> Result<DeskModel> {
    DeskModel::build(config.clone())
}

impl DeskModel {
    pub fn build(config: DeskModelConfig) -> Result<DeskModel> {
        let geometry = config.geometry;
        geometry.validate()?;
        if geometry.head_dim < BLOCK_WIDTH {
            return Err(Error::Desk(format!(
                "head_dim {} cannot hold a {}-wide private block",
                geometry.head_dim, BLOCK_WIDTH
            )));
        }
        if config.planted.len() != CognitiveFunction::ALL.len() {
            return Err(Error::Desk(format!(
                "planted map covers {} of {} functions",
                config.planted.len(),
                CognitiveFunction::ALL.len()
            )));
        }
        let mut claimed = BTreeMap::new();
        for (&function, &head) in &config.planted {
            geometry.validate_head(head)?;
            if let Some(prev) = claimed.insert(head, function) {
                return Err(Error::Desk(format!(
                    "head {head} planted for both {prev} and {function}"
                )));
            }
        }
        if geometry.grid_size() <= claimed.len() {
            return Err(Error::Desk(
                "grid has no spare head left for the jitter construction".into(),
            ));
        }

        let vocab = DeskVocab::build();
        let attn_scale = (geometry.head_dim as f32 / geometry.n_heads as f32).sqrt();

        // Roles: planted heads from the map, the first free head (layer-major)
        // becomes the jitter head, everything else is a constant noise head.
        let mut roles = BTreeMap::new();
        let mut jitter = None;
        for head in geometry.heads() {
            let role = if let Some(&function) = claimed.get(&head) {
                HeadRole::Planted(function)
            } else if jitter.is_none() {
                jitter = Some(head);
                HeadRole::Jitter
            } else {
                HeadRole::Noise
            };
            roles.insert(head, role);
        }

        let embed = build_embeddings(&vocab);
        let unembed = build_unembeddings(&vocab);
        let heads = build_heads(&config, &roles, attn_scale)?;
        let eos = vocab.id(EOS_NAME)?;

        Ok(DeskModel { config, vocab, embed, unembed, heads, roles, jitter, eos, attn_scale })
    }

    pub fn config(&self) -> &DeskModelConfig {
        &self.config
    }

    pub fn geometry(&self) -> ModelGeometry {
        self.config.geometry
    }

    pub fn vocab(&self) -> &DeskVocab {
        &self.vocab
    }

    /// Which head carries each function.
    pub fn planted_heads(&self) -> &BTreeMap<CognitiveFunction, HeadId> {
        &self.config.planted
    }

    pub fn head_role(&self, head: HeadId) -> Option<HeadRole> {
        self.roles.get(&head).copied()
    }

    pub fn jitter_head(&self) -> Option<HeadId> {
        self.jitter
    }

    /// The head-space axis along which function `f`'s planted head carries
    /// its signal; steering directions recovered from activations should be
    /// nearly parallel to it.
    pub fn planted_axis(&self, function: CognitiveFunction) -> Vec<f64> {
        let mut axis = vec![0.0; self.config.geometry.head_dim];
        match task_family(function) {
            TaskFamily::Copy => {
                for coord in axis.iter_mut().take(NUM_SYMBOLS) {
                    *coord = 1.0 / NUM_SYMBOLS as f64;
                }
                axis[PRESENCE_IDX] = 1.0;
            }
            TaskFamily::Count => axis[0] = 1.0,
            TaskFamily::Majority => axis[PRESENCE_IDX] = 1.0,
        }
        axis
    }

    // ------------------------------------------------------------------
    // Generation
    // ------------------------------------------------------------------

    /// Run greedy generation, optionally applying an intervention stack at
    /// the per-head value outputs, and capture those (post-intervention)
    /// outputs for every generated token.
    pub fn run_with_hooks(
        &self,
        prompt: &[String],
        options: &RunOptions,
        stack: Option<&InterventionStack>,
    ) -> Result<RunOutput> {
        if prompt.is_empty() {
            return Err(Error::Desk("prompt is empty".into()));
        }
        let mut tokens = self.vocab.encode(prompt)?;
        let prompt_len = tokens.len();

        let mut answer_tokens = Vec::new();
        let mut captured = Vec::new();
        for _ in 0..options.max_tokens {
            let trace = self.forward_step(&tokens, prompt_len, stack, options.capture_attention)?;
            let next = argmax(&trace.logits);
            tokens.push(next);
            answer_tokens.push(self.vocab.name(next).to_string());

            let mut grid = TokenActivations::new(self.config.geometry, trace.values)?;
            if options.capture_attention {
                grid = grid.with_attention(trace.attention, prompt_len)?;
            }
            captured.push(grid);

            if options.stop_at_eos && next == self.eos {
                break;
            }
        }

        let answer_text = answer_tokens
            .iter()
            .filter(|t| t.as_str() != EOS_NAME)
            .cloned()
            .collect::<Vec<_>>()
            .join(" ");
        Ok(RunOutput { answer_tokens, answer_text, activations: captured })
    }

    /// One full-sequence forward pass; returns next-token logits plus the
    /// per-head value outputs and prompt-attention rows at the last position.
    fn forward_step(
        &self,
        tokens: &[TokenId],
        prompt_len: usize,
        stack: Option<&InterventionStack>,
        capture_attention: bool,
    ) -> Result<StepTrace> {
        let geometry = self.config.geometry;
        let d_model = ChannelLayout::D_MODEL;
        let t_len = tokens.len();
        let last = t_len - 1;

        let mut residual: Vec<Vec<f32>> =
            tokens.iter().map(|&id| self.embed[id.0 as usize].clone()).collect();

        let mut values = Vec::with_capacity(geometry.n_layers * geometry.n_heads * geometry.head_dim);
        let mut attention = Vec::new();

        for layer in 0..geometry.n_layers {
            // All heads in a layer read the same snapshot of the stream.
            let input = residual.clone();
            for head in 0..geometry.n_heads {
                let head_id = HeadId::new(layer, head);
                let weights = &self.heads[layer][head];

                let qs: Vec<f32> = input.iter().map(|x| dot(&weights.query_read, x)).collect();
                let ks: Vec<f32> = input.iter().map(|x| dot(&weights.key_read, x)).collect();
                let mut vs = vec![vec![0.0f32; geometry.head_dim]; t_len];
                for &(head_coord, res_coord, w) in &weights.value {
                    for (v, x) in vs.iter_mut().zip(input.iter()) {
                        v[head_coord] += w * x[res_coord];
                    }
                }

                let mut last_row = Vec::new();
                for pos in 0..t_len {
                    let probs = causal_softmax(qs[pos], &ks[..=pos], self.attn_scale);
                    let mut out = vec![0.0f32; geometry.head_dim];
                    for (s, &p) in probs.iter().enumerate() {
                        if p != 0.0 {
                            for (o, v) in out.iter_mut().zip(vs[s].iter()) {
                                *o += p * v;
                            }
                        }
                    }

                    let role = if pos + 1 >= prompt_len {
                        PositionRole::Generated
                    } else {
                        PositionRole::Prompt
                    };
                    if let Some(stack) = stack {
                        stack.apply(head_id, pos, role, &mut out)?;
                    }

                    if pos == last {
                        values.extend_from_slice(&out);
                        if capture_attention {
                            last_row = probs[..prompt_len].to_vec();
                        }
                    }
                    for &(res_coord, head_coord, w) in &weights.output {
                        residual[pos][res_coord] += w * out[head_coord];
                    }
                }
                if capture_attention {
                    attention.extend_from_slice(&last_row);
                }
            }
        }

        let mut logits = vec![0.0f32; self.vocab.len()];
        let final_state = &residual[last];
        debug_assert_eq!(final_state.len(), d_model);
        for (logit, row) in logits.iter_mut().zip(self.unembed.iter()) {
            *logit = dot(row, final_state);
        }
        Ok(StepTrace { logits, values, attention })
    }
}

/// Options controlling a generation run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub max_tokens: usize,
    pub stop_at_eos: bool,
    pub capture_attention: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { max_tokens: 4, stop_at_eos: true, capture_attention: false }
    }
}

/// The result of one generation run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Every generated token, including the end token if reached.
    pub answer_tokens: Vec<String>,
    /// Generated tokens joined by spaces, end token excluded.
    pub answer_text: String,
    /// Post-intervention per-head value outputs, one grid per generated token.
    pub activations: Vec<TokenActivations>,
}

impl RunOutput {
    /// Package the captured activations under a sample id.
    pub fn into_sample(self, sample_id: &str) -> SampleActivations {
        SampleActivations { sample_id: sample_id.to_string(), tokens: self.activations }
    }
}

struct StepTrace {
    logits: Vec<f32>,
    values: Vec<f32>,
    attention: Vec<f32>,
}

// ============================================================================
// Task families
// ============================================================================

/// The three synthetic task shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskFamily {
    /// Answer is the single payload symbol present in the prompt.
    Copy,
    /// Answer is the number of marker tokens in the prompt.
    Count,
    /// Answer is the option with more of the five votes.
    Majority,
}

/// Which task family a function's prompts use.
pub fn task_family(function: CognitiveFunction) -> TaskFamily {
    use CognitiveFunction::*;
    match function {
        LowLevelVisual | HighLevelVisual | VisionKnowledgeRecall | LanguageInfoExtraction
        | LanguageKnowledgeRecall => TaskFamily::Copy,
        MathReasoning => TaskFamily::Count,
        Inference | DecisionMaking => TaskFamily::Majority,
    }
}

/// Chance accuracy of each family (uniform guessing over its answers).
pub fn chance_level(function: CognitiveFunction) -> f64 {
    match task_family(function) {
        TaskFamily::Copy => 1.0 / NUM_SYMBOLS as f64,
        TaskFamily::Count => 1.0 / 9.0,
        TaskFamily::Majority => 0.5,
    }
}

// ============================================================================
// Weight construction
// ============================================================================

fn build_embeddings(vocab: &DeskVocab) -> Vec<Vec<f32>> {
    let d = ChannelLayout::D_MODEL;
    vocab
        .tokens()
        .iter()
        .map(|info| {
            let mut e = vec![0.0f32; d];
            e[ChannelLayout::BIAS] = 1.0;
            match info.kind {
                TokenKind::Bos => e[ChannelLayout::BOS_FLAG] = 1.0,
                TokenKind::VisOpen
                | TokenKind::VisClose
                | TokenKind::TxtOpen
                | TokenKind::TxtClose
                | TokenKind::Decoy(_) => {}
                TokenKind::Eos | TokenKind::Null => e[ChannelLayout::CONTENT_EMITTED] = 1.0,
                TokenKind::Filler(i) => {
                    e[ChannelLayout::FILLER_FLAG] = 1.0;
                    e[ChannelLayout::FILLER_ID + i] = 1.0;
                }
                TokenKind::Query(f) => e[ChannelLayout::marker(f)] = 1.0,
                TokenKind::Symbol { function, index, weak } => {
                    let w = if weak { WEAK_SCALE } else { 1.0 };
                    e[ChannelLayout::tag(function)] = 1.0;
                    e[ChannelLayout::block(function) + index] = w;
                    e[ChannelLayout::block(function) + PRESENCE_IDX] = w;
                    e[ChannelLayout::CONTENT_EMITTED] = 1.0;
                }
                TokenKind::CountMarker => {
                    let f = CognitiveFunction::MathReasoning;
                    e[ChannelLayout::tag(f)] = 1.0;
                    e[ChannelLayout::block(f)] = 1.0;
                }
                TokenKind::Digit(_) => e[ChannelLayout::CONTENT_EMITTED] = 1.0,
                TokenKind::Vote { function, second, weak } => {
                    let w = if weak { WEAK_SCALE } else { 1.0 };
                    e[ChannelLayout::tag(function)] = 1.0;
                    e[ChannelLayout::block(function)] = if second { -w } else { w };
                    e[ChannelLayout::block(function) + PRESENCE_IDX] = w;
                    e[ChannelLayout::CONTENT_EMITTED] = 1.0;
                }
            }
            e
        })
        .collect()
}

/// Count-readout lines: `logit(num_k) = slope_k * x + intercept_k`, where
/// `x` is the count channel at the final position.  Slopes increase with
/// `k` and consecutive lines cross halfway between the channel values
/// produced by counts `k` and `k+1`, so the upper envelope selects exactly
/// the true count.  All intercepts are negative, keeping digits below the
/// refusal logit when no markers are present.
fn count_lines() -> [(f64, f64); 9] {
    let x = |k: usize| -> f64 {
        let k = k as f64;
        V_COUNT as f64 * 2.0 * k / (PROMPT_LEN as f64 + k)
    };
    let mut lines = [(0.0, 0.0); 9];
    let mut intercept = COUNT_TARGET - COUNT_SLOPE_BASE * x(1);
    for k in 1..=9 {
        let slope = COUNT_SLOPE_BASE + (k - 1) as f64 * COUNT_SLOPE_STEP;
        lines[k - 1] = (slope, intercept);
        if k < 9 {
            intercept -= COUNT_SLOPE_STEP * (x(k) + x(k + 1)) / 2.0;
        }
    }
    lines
}

fn build_unembeddings(vocab: &DeskVocab) -> Vec<Vec<f32>> {
    let d = ChannelLayout::D_MODEL;
    let lines = count_lines();
    vocab
        .tokens()
        .iter()
        .map(|info| {
            let mut row = vec![0.0f32; d];
            match info.kind {
                TokenKind::Null => row[ChannelLayout::BIAS] = NULL_LOGIT,
                TokenKind::Eos => row[ChannelLayout::CONTENT_EMITTED] = EOS_GAIN,
                TokenKind::Symbol { function, index, weak: false } => {
                    row[ChannelLayout::block(function) + index] = R_SYMBOL;
                    row[ChannelLayout::block(function) + PRESENCE_IDX] = R_PRESENCE;
                }
                TokenKind::Digit(k) => {
                    let (slope, intercept) = lines[k - 1];
                    let f = CognitiveFunction::MathReasoning;
                    row[ChannelLayout::block(f)] = slope as f32;
                    row[ChannelLayout::BIAS] = intercept as f32;
                }
                TokenKind::Vote { function, second, weak: false } => {
                    row[ChannelLayout::block(function)] =
                        if second { -R_VOTE } else { R_VOTE };
                    row[ChannelLayout::block(function) + PRESENCE_IDX] = R_VOTE_PRESENCE;
                }
                // Weak variants, frame tokens, fillers, decoys, queries and
                // markers are never emitted: their logits stay at zero,
                // strictly below the refusal logit.
                _ => {}
            }
            row
        })
        .collect()
}

fn build_heads(
    config: &DeskModelConfig,
    roles: &BTreeMap<HeadId, HeadRole>,
    attn_scale: f32,
) -> Result<Vec<Vec<HeadWeights>>> {
    let geometry = config.geometry;
    let d = ChannelLayout::D_MODEL;
    // Key gain giving an attention logit of `FOCUS_LOGIT` after scaling.
    let focus_gain = (FOCUS_LOGIT * attn_scale as f64 / Q_GAIN as f64) as f32;
    let count_gain = (COUNT_FOCUS * attn_scale as f64 / Q_GAIN as f64) as f32;

    let mut grid = Vec::with_capacity(geometry.n_layers);
    for layer in 0..geometry.n_layers {
        let mut row = Vec::with_capacity(geometry.n_heads);
        for head in 0..geometry.n_heads {
            let head_id = HeadId::new(layer, head);
            let role = roles[&head_id];
            let mut w = HeadWeights {
                query_read: vec![0.0; d],
                key_read: vec![0.0; d],
                ..HeadWeights::default()
            };
            match role {
                HeadRole::Planted(function) => {
                    w.query_read[ChannelLayout::marker(function)] = Q_GAIN;
                    let block = ChannelLayout::block(function);
                    match task_family(function) {
                        TaskFamily::Copy => {
                            w.key_read[ChannelLayout::tag(function)] = focus_gain;
                            for i in 0..NUM_SYMBOLS {
                                w.value.push((i, block + i, V_COPY));
                            }
                            w.value.push((PRESENCE_IDX, block + PRESENCE_IDX, V_COPY));
                            for i in 0..NUM_SYMBOLS {
                                w.output.push((block + i, i, 1.0));
                            }
                            w.output.push((block + PRESENCE_IDX, PRESENCE_IDX, 1.0));
                        }
                        TaskFamily::Count => {
                            w.key_read[ChannelLayout::tag(function)] = count_gain;
                            w.value.push((0, block, V_COUNT));
                            w.output.push((block, 0, 1.0));
                        }
                        TaskFamily::Majority => {
                            w.key_read[ChannelLayout::tag(function)] = focus_gain;
                            w.value.push((0, block, V_VOTE));
                            w.value.push((PRESENCE_IDX, block + PRESENCE_IDX, V_VOTE));
                            w.output.push((block, 0, 1.0));
                            w.output.push((block + PRESENCE_IDX, PRESENCE_IDX, 1.0));
                        }
                    }
                }
                HeadRole::Jitter => {
                    w.query_read[ChannelLayout::BIAS] = Q_GAIN;
                    w.key_read[ChannelLayout::FILLER_FLAG] = focus_gain;
                    for i in 0..NUM_FILLERS {
                        w.value.push((i, ChannelLayout::FILLER_ID + i, 1.0));
                    }
                    // Zero-sum mixing into each copy function's presence
                    // channel: the uniform part of the filler histogram
                    // cancels, leaving only per-sample fluctuation.
                    for &function in crate::desk::vocab::COPY_FUNCTIONS.iter() {
                        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
                            config.seed,
                            0x6a69_7474,
                            function.index() as u64,
                        ]));
                        let mut signs = [1.0f32, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
                        signs.shuffle(&mut rng);
                        let presence = ChannelLayout::block(function) + PRESENCE_IDX;
                        for (i, &s) in signs.iter().enumerate() {
                            w.output.push((presence, i, JITTER_SCALE * s));
                        }
                    }
                }
                HeadRole::Noise => {
                    w.query_read[ChannelLayout::BIAS] = Q_GAIN;
                    w.key_read[ChannelLayout::BOS_FLAG] = focus_gain;
                    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
                        config.seed,
                        0x6e6f_6973,
                        layer as u64,
                        head as u64,
                    ]));
                    for i in 0..crate::desk::vocab::NOISE_WIDTH {
                        let v: f32 = rng.gen_range(-1.0..1.0);
                        w.value.push((i, ChannelLayout::BIAS, NOISE_GAIN * v));
                        w.output.push((ChannelLayout::NOISE + i, i, 1.0));
                    }
                }
            }
            row.push(w);
        }
        grid.push(row);
    }
    Ok(grid)
}

// ============================================================================
// Numerics
// ============================================================================

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Softmax of `q * k_s / scale` over the causal prefix.
fn causal_softmax(q: f32, ks: &[f32], scale: f32) -> Vec<f32> {
    let logits: Vec<f32> = ks.iter().map(|&k| q * k / scale).collect();
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Greedy pick; ties break toward the lowest token id.
fn argmax(logits: &[f32]) -> TokenId {
    let mut best = 0usize;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    TokenId(best as u16)
}

// ============================================================================
// Tests
// ============================================================================
