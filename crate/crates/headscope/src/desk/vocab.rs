//! Token table and residual-channel layout for the desk model.
//!
//! The desk model is a miniature attention-only transformer whose weights are
//! constructed analytically rather than learned.  Its vocabulary and residual
//! stream are laid out so that every task family has a dedicated, private set
//! of channels: a head can only influence a task's answer if it reads and
//! writes that task's channels.  This file defines the token inventory, the
//! fixed prompt frame, and the channel offsets; the weight construction lives
//! in `model.rs`.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::types::CognitiveFunction;

// ============================================================================
// Prompt frame
// ============================================================================

/// Fixed prompt length: frame tokens plus two 12-slot content regions.
pub const PROMPT_LEN: usize = 30;
/// Slot positions inside the visual region.
pub const VISUAL_SLOTS: Range<usize> = 2..14;
/// Slot positions inside the textual region.
pub const TEXTUAL_SLOTS: Range<usize> = 16..28;
/// Number of content slots per region.
pub const SLOTS_PER_REGION: usize = 12;
/// Index of the trailing query token.
pub const QUERY_POS: usize = PROMPT_LEN - 1;

/// Positions covered by the visual region, as a set (for attention profiles).
pub fn visual_positions() -> std::collections::BTreeSet<usize> {
    VISUAL_SLOTS.collect()
}

// ============================================================================
// Residual channel layout
// ============================================================================

/// Number of distinct payload symbols per copy-family alphabet.
pub const NUM_SYMBOLS: usize = 12;
/// Width of one per-function private block: 12 content coords + 1 presence.
pub const BLOCK_WIDTH: usize = NUM_SYMBOLS + 1;
/// Index of the presence coordinate inside a private block.
pub const PRESENCE_IDX: usize = NUM_SYMBOLS;
/// Number of distinct filler tokens.
pub const NUM_FILLERS: usize = 8;
/// Number of distinct decoy tokens.
pub const NUM_DECOYS: usize = 10;
/// Width of the noise scratch block.
pub const NOISE_WIDTH: usize = 8;

/// Offsets of the named channel groups inside the residual stream.
///
/// The layout is fixed and independent of the head grid: heads are free to
/// read and write any subset of it.
pub struct ChannelLayout;

impl ChannelLayout {
    /// Attention key tags, one per function (payload/marker/vote tokens).
    pub const TAG: usize = 0;
    /// Attention query tags, one per function (set on the query token only).
    pub const MARKER: usize = 8;
    /// Constant-one coordinate present on every token.
    pub const BIAS: usize = 16;
    /// Set on the beginning-of-sequence token only.
    pub const BOS_FLAG: usize = 17;
    /// Set on filler tokens only.
    pub const FILLER_FLAG: usize = 18;
    /// Set on answer-like tokens; the end-of-sequence logit reads it.
    pub const CONTENT_EMITTED: usize = 19;
    /// One-hot identity of filler tokens (drives the jitter head).
    pub const FILLER_ID: usize = 20;
    /// Scratch block written by the constant heads; nothing decodes it.
    pub const NOISE: usize = Self::FILLER_ID + NUM_FILLERS;
    /// Start of the per-function private blocks.
    pub const BLOCKS: usize = Self::NOISE + NOISE_WIDTH;
    /// Total residual width.
    pub const D_MODEL: usize = Self::BLOCKS + 8 * BLOCK_WIDTH;

    /// Offset of function `f`'s private block.
    pub fn block(function: CognitiveFunction) -> usize {
        Self::BLOCKS + function.index() * BLOCK_WIDTH
    }

    /// Offset of function `f`'s attention key tag.
    pub fn tag(function: CognitiveFunction) -> usize {
        Self::TAG + function.index()
    }

    /// Offset of function `f`'s query marker.
    pub fn marker(function: CognitiveFunction) -> usize {
        Self::MARKER + function.index()
    }
}

// ============================================================================
// Token inventory
// ============================================================================

/// Index into the desk vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u16);

/// What a token is for; embeddings are derived from this in `model.rs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Bos,
    VisOpen,
    VisClose,
    TxtOpen,
    TxtClose,
    Eos,
    /// The refusal token emitted when no task signal reaches the output.
    Null,
    /// Inert padding; carries a one-hot identity read by the jitter head.
    Filler(usize),
    /// Inert non-filler content used to vary prompts.
    Decoy(usize),
    /// Trailing query token selecting which function is being asked.
    Query(CognitiveFunction),
    /// Copy-family payload symbol; `weak` halves its value-channel strength.
    Symbol {
        function: CognitiveFunction,
        index: usize,
        weak: bool,
    },
    /// Count-family marker token.
    CountMarker,
    /// Count-family answer digit (1..=9).
    Digit(usize),
    /// Majority-family vote token; `second` votes for option B.
    Vote {
        function: CognitiveFunction,
        second: bool,
        weak: bool,
    },
}

/// One vocabulary entry.
#[derive(Debug, Clone)]
pub struct TokenInfo {
    pub name: String,
    pub kind: TokenKind,
}

/// The desk vocabulary: a fixed, deterministic token table.
pub struct DeskVocab {
    tokens: Vec<TokenInfo>,
    by_name: BTreeMap<String, TokenId>,
}

/// Name of the refusal token.
pub const NULL_NAME: &str = "unknown";
/// Name of the end-of-sequence token.
pub const EOS_NAME: &str = "<eos>";

/// Functions whose tasks are single-symbol copies, in `ALL` order.
pub const COPY_FUNCTIONS: [CognitiveFunction; 5] = [
    CognitiveFunction::LowLevelVisual,
    CognitiveFunction::HighLevelVisual,
    CognitiveFunction::VisionKnowledgeRecall,
    CognitiveFunction::LanguageInfoExtraction,
    CognitiveFunction::LanguageKnowledgeRecall,
];

/// Functions whose tasks are five-vote majorities.
pub const MAJORITY_FUNCTIONS: [CognitiveFunction; 2] =
    [CognitiveFunction::Inference, CognitiveFunction::DecisionMaking];

/// Short prefix used in token names for each copy function.
pub fn copy_prefix(function: CognitiveFunction) -> &'static str {
    match function {
        CognitiveFunction::LowLevelVisual => "llv",
        CognitiveFunction::HighLevelVisual => "hlv",
        CognitiveFunction::VisionKnowledgeRecall => "vkr",
        CognitiveFunction::LanguageInfoExtraction => "lie",
        CognitiveFunction::LanguageKnowledgeRecall => "lkr",
        _ => unreachable!("not a copy function"),
    }
}

/// Short prefix used in vote-token names for each majority function.
pub fn majority_prefix(function: CognitiveFunction) -> &'static str {
    match function {
        CognitiveFunction::Inference => "inf",
        CognitiveFunction::DecisionMaking => "dec",
        _ => unreachable!("not a majority function"),
    }
}

impl DeskVocab {
    /// Build the fixed token table.
    pub fn build() -> DeskVocab {
        let mut tokens = Vec::new();
        let mut push = |name: String, kind: TokenKind| {
            tokens.push(TokenInfo { name, kind });
        };

        push("<bos>".into(), TokenKind::Bos);
        push("<vis>".into(), TokenKind::VisOpen);
        push("</vis>".into(), TokenKind::VisClose);
        push("<txt>".into(), TokenKind::TxtOpen);
        push("</txt>".into(), TokenKind::TxtClose);
        push(EOS_NAME.into(), TokenKind::Eos);
        push(NULL_NAME.into(), TokenKind::Null);

        for i in 0..NUM_FILLERS {
            push(format!("pad_{i}"), TokenKind::Filler(i));
        }
        for i in 0..NUM_DECOYS {
            push(format!("decoy_{i}"), TokenKind::Decoy(i));
        }
        for &function in CognitiveFunction::ALL.iter() {
            push(format!("ask_{}", function.code()), TokenKind::Query(function));
        }
        for &function in COPY_FUNCTIONS.iter() {
            let prefix = copy_prefix(function);
            for index in 0..NUM_SYMBOLS {
                push(
                    format!("{prefix}_s{index}"),
                    TokenKind::Symbol { function, index, weak: false },
                );
            }
            for index in 0..NUM_SYMBOLS {
                push(
                    format!("{prefix}_s{index}w"),
                    TokenKind::Symbol { function, index, weak: true },
                );
            }
        }
        push("mark".into(), TokenKind::CountMarker);
        for k in 1..=9 {
            push(format!("num_{k}"), TokenKind::Digit(k));
        }
        for &function in MAJORITY_FUNCTIONS.iter() {
            let prefix = majority_prefix(function);
            push(format!("{prefix}_a"), TokenKind::Vote { function, second: false, weak: false });
            push(format!("{prefix}_b"), TokenKind::Vote { function, second: true, weak: false });
            push(format!("{prefix}_aw"), TokenKind::Vote { function, second: false, weak: true });
            push(format!("{prefix}_bw"), TokenKind::Vote { function, second: true, weak: true });
        }

        let by_name = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), TokenId(i as u16)))
            .collect();
        DeskVocab { tokens, by_name }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Look a token up by name.
    pub fn id(&self, name: &str) -> Result<TokenId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Desk(format!("unknown token `{name}`")))
    }

    pub fn name(&self, id: TokenId) -> &str {
        &self.tokens[id.0 as usize].name
    }

    pub fn kind(&self, id: TokenId) -> &TokenKind {
        &self.tokens[id.0 as usize].kind
    }

    pub fn tokens(&self) -> &[TokenInfo] {
        &self.tokens
    }

    /// Name of copy function `f`'s symbol `index` (the answer form).
    pub fn symbol_name(&self, function: CognitiveFunction, index: usize, weak: bool) -> String {
        let suffix = if weak { "w" } else { "" };
        format!("{}_s{index}{suffix}", copy_prefix(function))
    }

    /// Name of the digit token for count `k`.
    pub fn digit_name(&self, k: usize) -> String {
        format!("num_{k}")
    }

    /// Name of majority function `f`'s vote/answer token.
    pub fn vote_name(&self, function: CognitiveFunction, second: bool, weak: bool) -> String {
        let letter = if second { "b" } else { "a" };
        let suffix = if weak { "w" } else { "" };
        format!("{}_{letter}{suffix}", majority_prefix(function))
    }

    /// Map a list of token names to ids, failing on the first unknown name.
    pub fn encode(&self, names: &[String]) -> Result<Vec<TokenId>> {
        names.iter().map(|n| self.id(n)).collect()
    }
}

// ============================================================================
// Tests
// ============================================================================
