//! Sigmoid probe training.
//!
//! The probe is p(x) = sigmoid(⟨θ, x⟩) over the (standardized, bias-
//! appended) head feature. Training is pinned to full-batch gradient
//! descent on the logistic loss with L2 decay so that any two machines
//! produce identical θ: learning rate 0.1, 500 iterations, decay 1e-3
//! (bias exempt), zero initialization. An optional tiny random
//! initialization exists purely for seed-sensitivity studies.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::dataset::HeadExamples;
use crate::types::{CognitiveFunction, HeadId};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
    /// Half-width of the uniform θ initialization; 0 = exact zero init.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig { learning_rate: 0.1, iterations: 500, l2: 1e-3, init_scale: 0.0, seed: 0 }
    }
}

/// A trained probe for one (head, function) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub head: HeadId,
    pub function: CognitiveFunction,
    /// Weights in standardized feature space; final entry is the bias.
    pub theta: Vec<f64>,
    pub test_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Per-dimension train-split statistics, reused verbatim on test features.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit population mean/std per dimension. Dimensions with (near-)zero
    /// variance standardize to exactly zero via a unit divisor, so constant
    /// features carry no signal instead of exploding.
    pub fn fit(features: &[Vec<f32>]) -> Result<Standardizer> {
        let n = features.len();
        if n == 0 {
            return Err(Error::Probe("cannot standardize an empty split".into()));
        }
        let d = features[0].len();
        let mut mean = vec![0.0f64; d];
        for x in features {
            if x.len() != d {
                return Err(Error::Probe("inconsistent feature dimensions".into()));
            }
            for (m, v) in mean.iter_mut().zip(x) {
                *m += *v as f64;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0f64; d];
        for x in features {
            for ((v, m), value) in var.iter_mut().zip(&mean).zip(x) {
                let centered = *value as f64 - *m;
                *v += centered * centered;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s < 1e-12 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    /// Standardize and append the bias input (constant 1).
    pub fn apply(&self, x: &[f32]) -> Vec<f64> {
        let mut out: Vec<f64> = x
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (*v as f64 - m) / s)
            .collect();
        out.push(1.0);
        out
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_finite(examples: &HeadExamples, split: &str) -> Result<()> {
    for x in &examples.features {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Probe(format!("non-finite feature in {split} split")));
        }
    }
    if examples.features.len() != examples.labels.len() {
        return Err(Error::Probe(format!("{split} split: feature/label length mismatch")));
    }
    Ok(())
}

/// Train one probe and score it on the held-out split.
pub fn train_probe(
    head: HeadId,
    function: CognitiveFunction,
    train: &HeadExamples,
    test: &HeadExamples,
    config: &TrainConfig,
) -> Result<ProbeResult> {
    check_finite(train, "train")?;
    check_finite(test, "test")?;
    if train.features.is_empty() {
        return Err(Error::Probe("empty train split".into()));
    }
    if test.features.is_empty() {
        return Err(Error::Probe("empty test split".into()));
    }

    let standardizer = Standardizer::fit(&train.features)?;
    let x_train: Vec<Vec<f64>> = train.features.iter().map(|x| standardizer.apply(x)).collect();
    let x_test: Vec<Vec<f64>> = test.features.iter().map(|x| standardizer.apply(x)).collect();
    let d = x_train[0].len();

    let mut theta = vec![0.0f64; d];
    if config.init_scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for t in theta.iter_mut() {
            *t = rng.gen_range(-config.init_scale..=config.init_scale);
        }
    }

    let n = x_train.len() as f64;
    let mut gradient = vec![0.0f64; d];
    for _ in 0..config.iterations {
        gradient.iter_mut().for_each(|g| *g = 0.0);
        for (x, &label) in x_train.iter().zip(&train.labels) {
            let z: f64 = theta.iter().zip(x).map(|(t, v)| t * v).sum();
            let residual = sigmoid(z) - if label { 1.0 } else { 0.0 };
            for (g, v) in gradient.iter_mut().zip(x) {
                *g += residual * v;
            }
        }
        for (i, (t, g)) in theta.iter_mut().zip(&gradient).enumerate() {
            let decay = if i + 1 == d { 0.0 } else { config.l2 * *t };
            *t -= config.learning_rate * (g / n + decay);
        }
    }

    let correct = x_test
        .iter()
        .zip(&test.labels)
        .filter(|(x, &label)| {
            let z: f64 = theta.iter().zip(x.iter()).map(|(t, v)| t * v).sum();
            (sigmoid(z) > 0.5) == label
        })
        .count();

    Ok(ProbeResult {
        head,
        function,
        theta,
        test_accuracy: correct as f64 / x_test.len() as f64,
        n_train: x_train.len(),
        n_test: x_test.len(),
    })
}
