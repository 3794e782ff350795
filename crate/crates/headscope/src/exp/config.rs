//! Experiment configuration: one serializable tree that pins every knob.
//!
//! Experiments are pure functions of (config, inputs): the config carries
//! explicit seed lists, never counts of "fresh" seeds, so re-running a
//! config byte-reproduces its reports. `validate` front-loads the checks —
//! ranges, duplicate seeds, referenced files — so failures surface before
//! any compute is spent.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::TrainConfig;
use crate::seeds::probe_seed;
use crate::types::{CognitiveFunction, HeadId, ModelGeometry};

// ============================================================================
// Experiment kinds and model source
// ============================================================================

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Train the full probe grid and emit rankings plus heatmaps.
    Probing,
    /// Accuracy vs. masked-head fraction, cognitive against random arms.
    MaskingSweep,
    /// The 8×8 matrix: mask function m's heads, evaluate function e.
    ConfusionMatrix,
    /// Chained two-step tasks: degrade step 1, measure step 2.
    Hierarchy,
    /// Partially degrade a function, then steer it back.
    Steering,
    /// Heatmap stability across token-selection k and probe seeds.
    Sensitivity,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Probing,
        ExperimentKind::MaskingSweep,
        ExperimentKind::ConfusionMatrix,
        ExperimentKind::Hierarchy,
        ExperimentKind::Steering,
        ExperimentKind::Sensitivity,
    ];

    /// Directory-name slug.
    pub fn slug(self) -> &'static str {
        match self {
            ExperimentKind::Probing => "probing",
            ExperimentKind::MaskingSweep => "masking-sweep",
            ExperimentKind::ConfusionMatrix => "confusion-matrix",
            ExperimentKind::Hierarchy => "hierarchy",
            ExperimentKind::Steering => "steering",
            ExperimentKind::Sensitivity => "sensitivity",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.slug())
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL.iter().copied().find(|k| k.slug() == s).ok_or_else(|| {
            let valid: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.slug()).collect();
            Error::Experiment(format!(
                "unknown experiment kind {s:?}; valid kinds: {}",
                valid.join(", ")
            ))
        })
    }
}

/// Where activations come from. Interventional experiments need a model
/// they can run; only pure probing can work from a pre-recorded dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSource {
    /// The built-in miniature model, constructed from a seed (and an
    /// optional geometry override).
    Desk {
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        geometry: Option<ModelGeometry>,
    },
    /// An activation dump on disk plus the labelled records that produced
    /// it. `dump` is the base path (sans extension) given at dump time.
    DumpFiles { dump: PathBuf, records: PathBuf },
}

// ============================================================================
// Setting groups
// ============================================================================

/// Task-suite shape; one suite of this shape is generated per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSettings {
    /// Tasks generated per cognitive function.
    pub n_per_function: usize,
    /// Fraction of the two chain-participant functions' tasks that are
    /// generated as two-step chains.
    pub chain_fraction: f64,
}

impl Default for SuiteSettings {
    fn default() -> SuiteSettings {
        SuiteSettings { n_per_function: 50, chain_fraction: 0.2 }
    }
}

/// Probe-training knobs shared by every experiment that trains probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSettings {
    /// Fraction of main questions held out for probe evaluation.
    pub test_fraction: f64,
    /// Minimum correctly-answered positives a function must have.
    pub min_positives: usize,
    /// Append the layer-mean feature to each head's own mean.
    pub layer_bias: bool,
    /// Number of answer tokens aggregated into each head feature (k).
    pub answer_tokens: usize,
    /// Fraction of the grid selected as a function's cognitive heads.
    pub top_fraction: f64,
    /// Global seed behind the per-(head, function) probe seeds.
    pub seed: u64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
    /// Half-width of the uniform probe initialization; 0 = exact zeros.
    pub init_scale: f64,
    /// Also capture attention rows (needed for modality profiles).
    pub capture_attention: bool,
}

impl Default for ProbeSettings {
    fn default() -> ProbeSettings {
        ProbeSettings {
            // 40% held out: pooled suites are large enough that a bigger
            // test split buys accuracy resolution without starving training.
            test_fraction: 0.4,
            min_positives: 10,
            layer_bias: false,
            answer_tokens: 1,
            top_fraction: 0.10,
            seed: 0,
            learning_rate: 0.1,
            iterations: 500,
            l2: 1e-3,
            init_scale: 0.0,
            capture_attention: false,
        }
    }
}

impl ProbeSettings {
    /// Training config for one (head, function) job.
    pub fn train_config(&self, head: HeadId, function: CognitiveFunction) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            l2: self.l2,
            init_scale: self.init_scale,
            seed: probe_seed(self.seed, head, function),
        }
    }
}

/// Everything the intervention arms of an experiment need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterventionSettings {
    /// Mask scale for ablation arms (≈0 keeps softmax shapes finite).
    pub mask_epsilon: f64,
    /// Mask scale for the steering protocol's partial degradation.
    pub partial_epsilon: f64,
    /// Steering strength sweep; 0 must be present to anchor the no-op row.
    pub alphas: Vec<f64>,
    /// Seed for random-donor patch draws.
    pub patch_seed: u64,
    /// Sweep fraction at which the cognitive-vs-random contrast is tested.
    pub contrast_fraction: f64,
    /// Heads masked per function in the confusion matrix (top-N ranked).
    pub matrix_heads: usize,
    /// Function degraded and steered by the steering experiment.
    pub steering_target: CognitiveFunction,
    /// Function whose heads serve as the unrelated-mask control in the
    /// hierarchy experiment. Must not participate in chains.
    pub hierarchy_control: CognitiveFunction,
}

impl Default for InterventionSettings {
    fn default() -> InterventionSettings {
        InterventionSettings {
            mask_epsilon: 0.001,
            partial_epsilon: 0.75,
            alphas: vec![0.0, 0.05, 0.1, 0.2],
            patch_seed: 0,
            contrast_fraction: 0.10,
            matrix_heads: 1,
            steering_target: CognitiveFunction::LanguageInfoExtraction,
            hierarchy_control: CognitiveFunction::LowLevelVisual,
        }
    }
}

/// Stability comparisons run by the sensitivity experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivitySettings {
    /// Token-selection widths to compare against the first entry.
    pub k_values: Vec<usize>,
    /// Probe seeds to compare against the first entry.
    pub probe_seeds: Vec<u64>,
    /// Probe initialization half-width used for the seed comparison; must
    /// be positive, otherwise every seed trains the identical probe.
    pub init_scale: f64,
}

impl Default for SensitivitySettings {
    fn default() -> SensitivitySettings {
        SensitivitySettings { k_values: vec![1, 3, 5], probe_seeds: vec![0, 1], init_scale: 1e-3 }
    }
}

// ============================================================================
// The experiment config
// ============================================================================

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_fractions() -> Vec<f64> {
    vec![0.0, 0.05, 0.10, 0.25, 0.50, 1.00]
}

/// Complete description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelSource,
    /// Explicit seed list; its length is the experiment's n.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Functions under study; empty means all eight.
    #[serde(default)]
    pub functions: Vec<CognitiveFunction>,
    #[serde(default)]
    pub suite: SuiteSettings,
    #[serde(default)]
    pub probe: ProbeSettings,
    #[serde(default)]
    pub intervention: InterventionSettings,
    /// Masked-head fractions for the sweep; 0 is the untouched baseline.
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub sensitivity: SensitivitySettings,
    /// Parent directory for the content-addressed run directory.
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// A config with every knob at its default.
    pub fn new(kind: ExperimentKind, model_seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            kind,
            model: ModelSource::Desk { seed: model_seed, geometry: None },
            seeds: default_seeds(),
            functions: Vec::new(),
            suite: SuiteSettings::default(),
            probe: ProbeSettings::default(),
            intervention: InterventionSettings::default(),
            fractions: default_fractions(),
            sensitivity: SensitivitySettings::default(),
            output_dir: output_dir.into(),
        }
    }

    /// The functions this experiment studies, in declaration order.
    pub fn target_functions(&self) -> Vec<CognitiveFunction> {
        if self.functions.is_empty() {
            CognitiveFunction::ALL.to_vec()
        } else {
            self.functions.clone()
        }
    }

    /// Suite config for one seed.
    pub fn suite_config(&self, seed: u64) -> crate::desk::SuiteConfig {
        crate::desk::SuiteConfig {
            n_per_function: self.suite.n_per_function,
            seed,
            chain_fraction: self.suite.chain_fraction,
        }
    }

    /// Check every knob before any compute happens. Referenced files must
    /// already exist; interventional kinds refuse dump-only sources.
    pub fn validate(&self) -> Result<()> {
        fn unit(name: &str, v: f64, include_zero: bool) -> Result<()> {
            let ok = v.is_finite() && v <= 1.0 && (v > 0.0 || (include_zero && v == 0.0));
            if ok {
                Ok(())
            } else {
                Err(Error::Experiment(format!("{name} must lie in (0, 1], got {v}")))
            }
        }

        if self.seeds.is_empty() {
            return Err(Error::Experiment("seed list must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Experiment("seed list contains duplicates".into()));
        }
        let mut funcs = self.functions.clone();
        funcs.sort_by_key(|f| f.index());
        funcs.dedup();
        if funcs.len() != self.functions.len() {
            return Err(Error::Experiment("function list contains duplicates".into()));
        }

        if self.suite.n_per_function == 0 {
            return Err(Error::Experiment("n_per_function must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.suite.chain_fraction) {
            return Err(Error::Experiment(format!(
                "chain_fraction must lie in [0, 1], got {}",
                self.suite.chain_fraction
            )));
        }

        unit("test_fraction", self.probe.test_fraction, false)?;
        if self.probe.test_fraction >= 1.0 {
            return Err(Error::Experiment("test_fraction must be below 1".into()));
        }
        unit("top_fraction", self.probe.top_fraction, false)?;
        if self.probe.answer_tokens == 0 {
            return Err(Error::Experiment("answer_tokens must be at least 1".into()));
        }

        let iv = &self.intervention;
        unit("mask_epsilon", iv.mask_epsilon, true)?;
        unit("partial_epsilon", iv.partial_epsilon, true)?;
        unit("contrast_fraction", iv.contrast_fraction, false)?;
        if iv.matrix_heads == 0 {
            return Err(Error::Experiment("matrix_heads must be at least 1".into()));
        }
        if iv.alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::Experiment("steering alphas must be finite".into()));
        }
        for &fraction in &self.fractions {
            if !fraction.is_finite() || !(0.0..=1.0).contains(&fraction) {
                return Err(Error::Experiment(format!(
                    "sweep fractions must lie in [0, 1], got {fraction}"
                )));
            }
        }

        let sens = &self.sensitivity;
        if sens.k_values.is_empty() || sens.k_values.contains(&0) {
            return Err(Error::Experiment("sensitivity k_values must be nonempty, all ≥ 1".into()));
        }
        if sens.probe_seeds.is_empty() {
            return Err(Error::Experiment("sensitivity probe_seeds must not be empty".into()));
        }
        if !(sens.init_scale > 0.0 && sens.init_scale.is_finite()) {
            return Err(Error::Experiment(
                "sensitivity init_scale must be positive, or seeds cannot differ".into(),
            ));
        }

        match &self.model {
            ModelSource::Desk { geometry, .. } => {
                if let Some(g) = geometry {
                    g.validate()?;
                }
            }
            ModelSource::DumpFiles { dump, records } => {
                if self.kind != ExperimentKind::Probing {
                    return Err(Error::Experiment(format!(
                        "{} needs a runnable model, not a pre-recorded dump",
                        self.kind
                    )));
                }
                let manifest = dump.with_extension("manifest.json");
                for path in [&manifest, records] {
                    if !path.exists() {
                        return Err(Error::Experiment(format!(
                            "referenced file does not exist: {}",
                            path.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

// ============================================================================
// Tests
// ============================================================================
