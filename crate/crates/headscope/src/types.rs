//! Shared domain vocabulary: the eight-function taxonomy, head addressing,
//! model geometry, and the subQAF record format.
//!
//! Everything downstream (activation stores, probes, interventions,
//! experiments) speaks in these types, so their encodings are deliberately
//! boring and stable: functions serialize as lower_snake_case codes, heads
//! order layer-major, records live in JSON Lines files.

use std::cmp::Ordering;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ============================================================================
// Cognitive functions
// ============================================================================

/// The eight functions a head can specialize in.
///
/// The set is closed: probes, heatmaps, patch banks, and confusion matrices
/// all allocate one slot per variant, in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CognitiveFunction {
    LowLevelVisual,
    HighLevelVisual,
    VisionKnowledgeRecall,
    LanguageInfoExtraction,
    LanguageKnowledgeRecall,
    MathReasoning,
    Inference,
    DecisionMaking,
}

impl CognitiveFunction {
    /// All variants, in canonical order.
    pub const ALL: [CognitiveFunction; 8] = [
        CognitiveFunction::LowLevelVisual,
        CognitiveFunction::HighLevelVisual,
        CognitiveFunction::VisionKnowledgeRecall,
        CognitiveFunction::LanguageInfoExtraction,
        CognitiveFunction::LanguageKnowledgeRecall,
        CognitiveFunction::MathReasoning,
        CognitiveFunction::Inference,
        CognitiveFunction::DecisionMaking,
    ];

    /// Stable string code used in files, CLI arguments, and reports.
    pub fn code(self) -> &'static str {
        match self {
            CognitiveFunction::LowLevelVisual => "low_level_visual",
            CognitiveFunction::HighLevelVisual => "high_level_visual",
            CognitiveFunction::VisionKnowledgeRecall => "vision_knowledge_recall",
            CognitiveFunction::LanguageInfoExtraction => "language_info_extraction",
            CognitiveFunction::LanguageKnowledgeRecall => "language_knowledge_recall",
            CognitiveFunction::MathReasoning => "math_reasoning",
            CognitiveFunction::Inference => "inference",
            CognitiveFunction::DecisionMaking => "decision_making",
        }
    }

    /// Position of this variant inside [`Self::ALL`].
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|f| *f == self).expect("variant listed in ALL")
    }

    /// True for the functions whose task content lives in the visual segment.
    pub fn is_vision(self) -> bool {
        matches!(
            self,
            CognitiveFunction::LowLevelVisual
                | CognitiveFunction::HighLevelVisual
                | CognitiveFunction::VisionKnowledgeRecall
        )
    }
}

impl fmt::Display for CognitiveFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for CognitiveFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_function(s)
    }
}

/// Parse a stable function code back into its variant.
///
/// Unknown codes report the full list of valid ones, since these strings
/// typically arrive from config files and CLI flags typed by hand.
pub fn parse_function(code: &str) -> Result<CognitiveFunction> {
    CognitiveFunction::ALL
        .iter()
        .copied()
        .find(|f| f.code() == code)
        .ok_or_else(|| {
            let valid: Vec<&str> = CognitiveFunction::ALL.iter().map(|f| f.code()).collect();
            Error::Schema(format!(
                "unknown cognitive function code {code:?}; valid codes: {}",
                valid.join(", ")
            ))
        })
}

// ============================================================================
// Head addressing and geometry
// ============================================================================

/// Address of one attention head: layer index and head index, both 0-based.
///
/// Heads order layer-major (`L0H0 < L0H1 < ... < L1H0 < ...`); rankings,
/// selections, and reports rely on this order for deterministic tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        HeadId { layer, head }
    }

    /// Flat index into a layer-major grid of `n_heads` heads per layer.
    pub fn flat(self, n_heads: usize) -> usize {
        self.layer * n_heads + self.head
    }
}

impl Ord for HeadId {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.layer, self.head).cmp(&(other.layer, other.head))
    }
}

impl PartialOrd for HeadId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

impl FromStr for HeadId {
    type Err = Error;

    /// Parse the display form back: `"L2H3"` → layer 2, head 3.
    fn from_str(s: &str) -> Result<Self> {
        let parse = || -> Option<HeadId> {
            let rest = s.strip_prefix('L')?;
            let (layer, head) = rest.split_once('H')?;
            Some(HeadId::new(layer.parse().ok()?, head.parse().ok()?))
        };
        parse().ok_or_else(|| {
            Error::Schema(format!("head address {s:?} is not of the form L<layer>H<head>"))
        })
    }
}

/// Shape of the model under study, as far as probing cares: number of
/// layers, heads per layer, and per-head value dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGeometry {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
}

impl ModelGeometry {
    pub fn new(n_layers: usize, n_heads: usize, head_dim: usize) -> Self {
        ModelGeometry { n_layers, n_heads, head_dim }
    }

    /// Total number of heads in the grid.
    pub fn grid_size(&self) -> usize {
        self.n_layers * self.n_heads
    }

    /// All head ids, in layer-major order.
    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        let n_heads = self.n_heads;
        (0..self.n_layers).flat_map(move |l| (0..n_heads).map(move |m| HeadId::new(l, m)))
    }

    /// Check that a head id addresses a real slot in this geometry.
    pub fn validate_head(&self, head: HeadId) -> Result<()> {
        if head.layer >= self.n_layers || head.head >= self.n_heads {
            return Err(Error::Schema(format!(
                "head {head} outside geometry ({} layers x {} heads)",
                self.n_layers, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.head_dim == 0 {
            return Err(Error::Schema(format!(
                "degenerate geometry: {} layers, {} heads, head_dim {}",
                self.n_layers, self.n_heads, self.head_dim
            )));
        }
        Ok(())
    }
}

// ============================================================================
// SubQAF records
// ============================================================================

/// One (subquestion, answer, function) triplet, optionally annotated with a
/// model answer and its correctness.
///
/// Field names are load-bearing: they are the JSON keys of the interchange
/// format, one record per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQAFRecord {
    /// Groups decomposition steps of the same original question. Splits
    /// never separate records sharing this id.
    pub main_question_id: String,
    /// 0-based position of this subquestion inside its decomposition chain.
    pub step_index: usize,
    pub subquestion: String,
    pub gold_answer: String,
    pub function: CognitiveFunction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_correct: Option<bool>,
}

impl SubQAFRecord {
    /// Stable per-record id used to key activation dumps: `<main id>#<step>`.
    pub fn sample_id(&self) -> String {
        format!("{}#{}", self.main_question_id, self.step_index)
    }
}

/// Read a JSON Lines file of subQAF records. Blank lines are skipped;
/// anything else that fails to parse aborts with the offending line number.
pub fn read_subqaf_jsonl(path: &Path) -> Result<Vec<SubQAFRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SubQAFRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Schema(format!("{}:{}: bad subQAF record: {e}", path.display(), line_no + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Write subQAF records as JSON Lines, one record per line, trailing newline.
pub fn write_subqaf_jsonl(path: &Path, records: &[SubQAFRecord]) -> Result<()> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.push(b'\n');
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&out).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
