//! Statistics over heatmaps and intervention outcomes: sparsity counts,
//! Pearson correlation between function grids, Welch's t-test, and
//! cross-function head overlap.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::HeatmapGrid;
use crate::types::{CognitiveFunction, HeadId};

// ============================================================================
// Sparsity
// ============================================================================

/// How much of one function's grid clears an accuracy threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsityReport {
    pub function: CognitiveFunction,
    pub threshold: f64,
    pub fraction_above: f64,
    pub heads_above: Vec<HeadId>,
}

/// Count heads strictly above `threshold`. Exact counting, no smoothing.
pub fn sparsity(heatmap: &HeatmapGrid, threshold: f64) -> Result<SparsityReport> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::Analysis(format!("threshold must lie in (0,1), got {threshold}")));
    }
    let heads_above: Vec<HeadId> = heatmap
        .geometry
        .heads()
        .filter(|&h| heatmap.value(h) > threshold)
        .collect();
    Ok(SparsityReport {
        function: heatmap.function,
        threshold,
        fraction_above: heads_above.len() as f64 / heatmap.geometry.grid_size() as f64,
        heads_above,
    })
}

// ============================================================================
// Pearson correlation
// ============================================================================

/// Sample Pearson coefficient between two grids of the same shape,
/// flattened layer-major.
pub fn pearson(a: &HeatmapGrid, b: &HeatmapGrid) -> Result<f64> {
    if a.geometry != b.geometry {
        return Err(Error::Analysis(format!(
            "grid shapes differ: {:?} vs {:?}",
            a.geometry, b.geometry
        )));
    }
    pearson_slices(&a.values, &b.values)
}

pub fn pearson_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Analysis(format!(
            "pearson needs two equal-length series of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::Analysis("pearson undefined for a zero-variance series".into()));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

// ============================================================================
// Welch's t-test
// ============================================================================

/// Outcome of a two-sided Welch test. `degenerate` marks the zero-variance
/// conventions, where the p-value is declared rather than computed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    pub p_value: f64,
    pub degenerate: bool,
}

/// Welch's unequal-variance t-test with a two-sided p-value from the
/// Student-t CDF.
///
/// Zero-variance corner cases follow fixed conventions instead of dividing
/// by zero: equal means → p = 1 (indistinguishable), unequal means → p = 0
/// (separated with certainty); both are flagged `degenerate`.
pub fn welch_t_test(sample_a: &[f64], sample_b: &[f64]) -> Result<WelchResult> {
    if sample_a.len() < 2 || sample_b.len() < 2 {
        return Err(Error::Analysis(format!(
            "welch test needs at least 2 observations per sample, got {} and {}",
            sample_a.len(),
            sample_b.len()
        )));
    }
    if sample_a.iter().chain(sample_b).any(|v| !v.is_finite()) {
        return Err(Error::Analysis("welch test requires finite observations".into()));
    }
    let (mean_a, var_a) = mean_and_sample_var(sample_a);
    let (mean_b, var_b) = mean_and_sample_var(sample_b);
    let (na, nb) = (sample_a.len() as f64, sample_b.len() as f64);

    let se2 = var_a / na + var_b / nb;
    if se2 == 0.0 {
        let equal = mean_a == mean_b;
        return Ok(WelchResult {
            t: if equal { 0.0 } else { f64::INFINITY * (mean_a - mean_b).signum() },
            dof: f64::NAN,
            p_value: if equal { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = (mean_a - mean_b) / se2.sqrt();
    let dof = se2 * se2
        / (var_a * var_a / (na * na * (na - 1.0)) + var_b * var_b / (nb * nb * (nb - 1.0)));
    let p_value = 2.0 * student_t_sf(t.abs(), dof);
    Ok(WelchResult { t, dof, p_value: p_value.min(1.0), degenerate: false })
}

fn mean_and_sample_var(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Survival function P(T > t) for Student's t with `dof` degrees of
/// freedom, t ≥ 0: I_{ν/(ν+t²)}(ν/2, 1/2) / 2 via the regularized
/// incomplete beta.
fn student_t_sf(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 0.5;
    }
    let x = dof / (dof + t * t);
    0.5 * incomplete_beta_regularized(0.5 * dof, 0.5, x)
}

/// Regularized incomplete beta I_x(a, b) by the Lentz continued fraction,
/// using the symmetry transform to keep the fraction convergent.
fn incomplete_beta_regularized(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation of ln Γ(x), accurate to ~1e-13 for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    // Published g = 7, n = 9 constants verbatim; the digits past f64
    // precision are kept so the table matches its source exactly.
    #[allow(clippy::excessive_precision)]
    const COEFFICIENTS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFICIENTS[0];
    for (i, &coefficient) in COEFFICIENTS.iter().enumerate().skip(1) {
        acc += coefficient / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

// ============================================================================
// Overlap
// ============================================================================

/// Which functions claim each head, and how many heads are claimed by more
/// than one function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapReport {
    pub memberships: BTreeMap<HeadId, BTreeSet<CognitiveFunction>>,
    pub n_selected: usize,
    pub n_multi_function: usize,
    pub multi_function_fraction: f64,
}

/// Intersect per-function head selections into an overlap report.
pub fn overlap(
    selections: &BTreeMap<CognitiveFunction, BTreeSet<HeadId>>,
) -> OverlapReport {
    let mut memberships: BTreeMap<HeadId, BTreeSet<CognitiveFunction>> = BTreeMap::new();
    for (&function, heads) in selections {
        for &head in heads {
            memberships.entry(head).or_default().insert(function);
        }
    }
    let n_selected = memberships.len();
    let n_multi_function = memberships.values().filter(|fs| fs.len() > 1).count();
    OverlapReport {
        memberships,
        n_selected,
        n_multi_function,
        multi_function_fraction: if n_selected == 0 {
            0.0
        } else {
            n_multi_function as f64 / n_selected as f64
        },
    }
}
