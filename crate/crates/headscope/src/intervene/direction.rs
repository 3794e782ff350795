//! Steering directions: the correct-minus-incorrect activation axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction and scale for steering one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringDirection {
    /// mean(correct) − mean(incorrect), unnormalized.
    pub dir: Vec<f64>,
    /// Standard deviation of ⟨x, dir/‖dir‖⟩ over all contributing samples.
    pub sigma: f64,
    /// True when the two group means coincide and the direction is the
    /// zero vector; steering with it is a no-op.
    pub zero_direction: bool,
}

/// Build the steering direction from labelled head activations.
pub fn compute_direction(
    correct: &[Vec<f32>],
    incorrect: &[Vec<f32>],
) -> Result<SteeringDirection> {
    if correct.is_empty() || incorrect.is_empty() {
        return Err(Error::Intervention(format!(
            "direction needs both outcome groups: {} correct, {} incorrect",
            correct.len(),
            incorrect.len()
        )));
    }
    let d = correct[0].len();
    for x in correct.iter().chain(incorrect) {
        if x.len() != d {
            return Err(Error::Intervention("activation dimensions differ".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Intervention("non-finite activation in direction data".into()));
        }
    }
    let mean = |group: &[Vec<f32>]| -> Vec<f64> {
        let mut out = vec![0.0f64; d];
        for x in group {
            for (acc, v) in out.iter_mut().zip(x) {
                *acc += *v as f64;
            }
        }
        out.iter_mut().for_each(|v| *v /= group.len() as f64);
        out
    };
    let mean_correct = mean(correct);
    let mean_incorrect = mean(incorrect);
    let dir: Vec<f64> =
        mean_correct.iter().zip(&mean_incorrect).map(|(a, b)| a - b).collect();

    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(SteeringDirection { dir, sigma: 0.0, zero_direction: true });
    }
    let unit: Vec<f64> = dir.iter().map(|v| v / norm).collect();
    let projections: Vec<f64> = correct
        .iter()
        .chain(incorrect)
        .map(|x| x.iter().zip(&unit).map(|(v, u)| *v as f64 * u).sum())
        .collect();
    let n = projections.len() as f64;
    let mean_projection = projections.iter().sum::<f64>() / n;
    let sigma = (projections.iter().map(|p| (p - mean_projection).powi(2)).sum::<f64>() / n)
        .sqrt();
    Ok(SteeringDirection { dir, sigma, zero_direction: false })
}

/// x += α·σ·dir, exactly as specified. α = 0 returns without touching the
/// buffer so un-steered runs stay bitwise identical.
pub fn apply_steering(output: &mut [f32], direction: &SteeringDirection, alpha: f64) {
    if alpha == 0.0 || direction.zero_direction {
        return;
    }
    for (v, dir) in output.iter_mut().zip(&direction.dir) {
        *v = (*v as f64 + alpha * direction.sigma * dir) as f32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_case() {
        let direction =
            compute_direction(&[vec![1.0, 0.0]], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(direction.dir, vec![1.0, 0.0]);
        assert!(!direction.zero_direction);
        // Projections of (1,0) and (0,0) on (1,0): {1, 0} -> population
        // std = 0.5.
        assert!((direction.sigma - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_distributions_flag_zero_direction() {
        let group = vec![vec![0.5f32, -1.0], vec![1.5, 1.0]];
        let direction = compute_direction(&group, &group).unwrap();
        assert!(direction.zero_direction);
        assert!(direction.dir.iter().all(|v| *v == 0.0));
        // Applying it changes nothing.
        let mut out = vec![3.0f32, 4.0];
        apply_steering(&mut out, &direction, 0.1);
        assert_eq!(out, vec![3.0, 4.0]);
    }

    #[test]
    fn empty_group_rejected() {
        assert!(compute_direction(&[], &[vec![0.0]]).is_err());
        assert!(compute_direction(&[vec![0.0]], &[]).is_err());
    }

    #[test]
    fn alpha_zero_is_bitwise_identity() {
        let direction =
            SteeringDirection { dir: vec![1.0, -2.0], sigma: 3.0, zero_direction: false };
        let original = vec![0.1f32, -0.0];
        let mut output = original.clone();
        apply_steering(&mut output, &direction, 0.0);
        assert_eq!(
            original.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            output.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        );
    }

    #[test]
    fn steering_shift_is_alpha_sigma_dir() {
        let direction =
            SteeringDirection { dir: vec![2.0, -1.0], sigma: 0.5, zero_direction: false };
        let mut output = vec![1.0f32, 1.0];
        apply_steering(&mut output, &direction, 0.1);
        // Shift = 0.1 · 0.5 · dir = (0.1, -0.05).
        assert!((output[0] - 1.1).abs() < 1e-6);
        assert!((output[1] - 0.95).abs() < 1e-6);
    }

    proptest! {
        /// Scaling every activation by c > 0 scales dir by c and sigma by
        /// c, so the applied shift α·σ·dir is homogeneous of degree 2.
        #[test]
        fn direction_is_homogeneous_degree_one(seed in 0u64..200, c in 0.1f64..8.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample = |rng: &mut ChaCha8Rng| -> Vec<f32> {
                (0..4).map(|_| rng.gen_range(-2.0f32..2.0)).collect()
            };
            let correct: Vec<Vec<f32>> = (0..6).map(|_| sample(&mut rng)).collect();
            let mut incorrect: Vec<Vec<f32>> = (0..5).map(|_| sample(&mut rng)).collect();
            incorrect[0][0] += 1.0; // keep the means apart
            let scale = |group: &[Vec<f32>]| -> Vec<Vec<f32>> {
                group
                    .iter()
                    .map(|x| x.iter().map(|v| (*v as f64 * c) as f32).collect())
                    .collect()
            };
            let base = compute_direction(&correct, &incorrect).unwrap();
            let scaled = compute_direction(&scale(&correct), &scale(&incorrect)).unwrap();
            prop_assume!(!base.zero_direction);
            for (orig, new) in base.dir.iter().zip(&scaled.dir) {
                prop_assert!((new - c * orig).abs() < 1e-3 * (1.0 + orig.abs() * c));
            }
            prop_assert!(
                (scaled.sigma - c * base.sigma).abs() < 1e-3 * (1.0 + base.sigma * c),
                "sigma {} vs scaled {}", base.sigma, scaled.sigma
            );
        }
    }
}
