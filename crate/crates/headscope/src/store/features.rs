//! Turning raw per-token activations into per-head probe features.
//!
//! For each head, the base feature is the mean of its value vectors over the
//! selected answer tokens. The augmented feature appends the layer mean (the
//! head-wise average of all base features in the same layer), which gives a
//! probe layer-level context alongside the individual head.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::store::dump::{ActivationDump, SampleActivations};
use crate::types::{HeadId, ModelGeometry};

/// Probe feature for one head of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadFeature {
    pub head: HeadId,
    /// Mean value vector over the selected tokens (`head_dim` floats).
    pub base: Vec<f32>,
    /// Mean of `base` across all heads in this head's layer (`head_dim`).
    pub layer_mean: Vec<f32>,
}

impl HeadFeature {
    /// `base` followed by `layer_mean`: the probe input with layer bias on.
    pub fn augmented(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.base.len() * 2);
        out.extend_from_slice(&self.base);
        out.extend_from_slice(&self.layer_mean);
        out
    }
}

/// Average the selected tokens' activations into one feature per head.
///
/// `token_indices` is a set: duplicates collapse and order never matters.
/// Indices must address captured tokens; an empty selection is an error
/// because a mean over nothing is undefined.
pub fn aggregate_features(
    sample: &SampleActivations,
    token_indices: &[usize],
) -> Result<Vec<HeadFeature>> {
    let unique: BTreeSet<usize> = token_indices.iter().copied().collect();
    if unique.is_empty() {
        return Err(Error::Store(format!(
            "sample {:?}: empty token selection",
            sample.sample_id
        )));
    }
    if let Some(&bad) = unique.iter().find(|&&i| i >= sample.tokens.len()) {
        return Err(Error::Store(format!(
            "sample {:?}: token index {bad} out of range ({} captured)",
            sample.sample_id,
            sample.tokens.len()
        )));
    }
    let g = sample.tokens[0].geometry();
    let d = g.head_dim;
    let count = unique.len() as f32;

    let mut base = vec![0.0f32; g.n_layers * g.n_heads * d];
    for &idx in &unique {
        let token = &sample.tokens[idx];
        for (acc, v) in base.iter_mut().zip(token.values()) {
            *acc += *v;
        }
    }
    for v in base.iter_mut() {
        *v /= count;
    }

    let mut layer_means = vec![0.0f32; g.n_layers * d];
    for layer in 0..g.n_layers {
        for head in 0..g.n_heads {
            let offset = (layer * g.n_heads + head) * d;
            for k in 0..d {
                layer_means[layer * d + k] += base[offset + k];
            }
        }
        for k in 0..d {
            layer_means[layer * d + k] /= g.n_heads as f32;
        }
    }

    let mut out = Vec::with_capacity(g.grid_size());
    for layer in 0..g.n_layers {
        for head in 0..g.n_heads {
            let offset = (layer * g.n_heads + head) * d;
            out.push(HeadFeature {
                head: HeadId::new(layer, head),
                base: base[offset..offset + d].to_vec(),
                layer_mean: layer_means[layer * d..(layer + 1) * d].to_vec(),
            });
        }
    }
    Ok(out)
}

// ============================================================================
// Feature store
// ============================================================================

/// Per-sample head features, keyed by sample id. Read-only once built, so
/// probe jobs can share it across threads freely.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    geometry: ModelGeometry,
    sample_ids: Vec<String>,
    features: Vec<Vec<HeadFeature>>,
    index: BTreeMap<String, usize>,
}

impl FeatureStore {
    /// Aggregate every sample of a dump with its selected token indices.
    /// Samples missing from `selections` (or with empty selections) are
    /// skipped — callers decide whether that's worth flagging.
    pub fn build(
        dump: &ActivationDump,
        selections: &BTreeMap<String, Vec<usize>>,
    ) -> Result<FeatureStore> {
        let mut store = FeatureStore {
            geometry: dump.manifest.geometry,
            sample_ids: Vec::new(),
            features: Vec::new(),
            index: BTreeMap::new(),
        };
        for sample in &dump.samples {
            let Some(indices) = selections.get(&sample.sample_id) else { continue };
            if indices.is_empty() {
                continue;
            }
            store.insert(sample.sample_id.clone(), aggregate_features(sample, indices)?);
        }
        Ok(store)
    }

    pub fn insert(&mut self, sample_id: String, features: Vec<HeadFeature>) {
        self.index.insert(sample_id.clone(), self.sample_ids.len());
        self.sample_ids.push(sample_id);
        self.features.push(features);
    }

    pub fn geometry(&self) -> ModelGeometry {
        self.geometry
    }

    pub fn new_empty(geometry: ModelGeometry) -> FeatureStore {
        FeatureStore {
            geometry,
            sample_ids: Vec::new(),
            features: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.index.contains_key(sample_id)
    }

    /// Features of one head for one sample.
    pub fn head_feature(&self, sample_id: &str, head: HeadId) -> Option<&HeadFeature> {
        let &i = self.index.get(sample_id)?;
        self.features[i].get(head.flat(self.geometry.n_heads))
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }
}

// ============================================================================
// Modality attention profile
// ============================================================================

/// Mean attention mass each head puts on `visual_positions`, averaged over
/// every sample and captured token of the dump.
///
/// Requires the dump's attention channel. Positions outside a sample's
/// prompt contribute nothing (mass there is zero by construction).
pub fn modality_attention_profile(
    dump: &ActivationDump,
    heads: &[HeadId],
    visual_positions: &BTreeSet<usize>,
) -> Result<BTreeMap<HeadId, f64>> {
    if !dump.manifest.has_attention_channel {
        return Err(Error::Store("dump carries no attention channel".into()));
    }
    let g = dump.manifest.geometry;
    for &head in heads {
        g.validate_head(head)?;
    }
    let mut sums: BTreeMap<HeadId, f64> = heads.iter().map(|&h| (h, 0.0)).collect();
    let mut n_rows = 0u64;
    for sample in &dump.samples {
        for token in &sample.tokens {
            n_rows += 1;
            for &head in heads {
                let row = token.head_attention(head.layer, head.head);
                let mass: f64 = visual_positions
                    .iter()
                    .filter(|&&p| p < row.len())
                    .map(|&p| row[p] as f64)
                    .sum();
                *sums.get_mut(&head).unwrap() += mass;
            }
        }
    }
    if n_rows == 0 {
        return Err(Error::Store("dump has no captured tokens to profile".into()));
    }
    for v in sums.values_mut() {
        *v /= n_rows as f64;
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::dump::TokenActivations;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_from_grids(g: ModelGeometry, id: &str, grids: Vec<Vec<f32>>) -> SampleActivations {
        let tokens =
            grids.into_iter().map(|v| TokenActivations::new(g, v).unwrap()).collect();
        SampleActivations { sample_id: id.into(), tokens }
    }

    #[test]
    fn base_feature_is_token_mean() {
        // Geometry (1 layer, 2 heads, dim 2); two tokens.
        // head0: [1,3] then [3,5] -> mean [2,4]; head1: [5,7] then [7,9] -> [6,8].
        let g = ModelGeometry::new(1, 2, 2);
        let sample = sample_from_grids(
            g,
            "s",
            vec![vec![1.0, 3.0, 5.0, 7.0], vec![3.0, 5.0, 7.0, 9.0]],
        );
        let features = aggregate_features(&sample, &[0, 1]).unwrap();
        assert_eq!(features[0].base, vec![2.0, 4.0]);
        assert_eq!(features[1].base, vec![6.0, 8.0]);
        // Layer mean averages the two heads: [(2+6)/2, (4+8)/2] = [4, 6].
        assert_eq!(features[0].layer_mean, vec![4.0, 6.0]);
        assert_eq!(features[1].layer_mean, features[0].layer_mean);
        // Augmented = base ++ layer_mean.
        assert_eq!(features[0].augmented(), vec![2.0, 4.0, 4.0, 6.0]);
        assert_eq!(features[0].augmented().len(), 2 * g.head_dim);
    }

    #[test]
    fn layer_mean_shared_within_layer() {
        let g = ModelGeometry::new(2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid: Vec<f32> =
            (0..g.n_layers * g.n_heads * g.head_dim).map(|_| rng.gen::<f32>()).collect();
        let sample = sample_from_grids(g, "s", vec![grid]);
        let features = aggregate_features(&sample, &[0]).unwrap();
        for layer in 0..g.n_layers {
            let reference = &features[layer * g.n_heads].layer_mean;
            for head in 1..g.n_heads {
                assert_eq!(&features[layer * g.n_heads + head].layer_mean, reference);
            }
        }
    }

    #[test]
    fn empty_selection_rejected() {
        let g = ModelGeometry::new(1, 1, 2);
        let sample = sample_from_grids(g, "s", vec![vec![1.0, 2.0]]);
        assert!(aggregate_features(&sample, &[]).is_err());
    }

    #[test]
    fn out_of_range_index_rejected() {
        let g = ModelGeometry::new(1, 1, 2);
        let sample = sample_from_grids(g, "s", vec![vec![1.0, 2.0]]);
        let err = aggregate_features(&sample, &[0, 3]).unwrap_err().to_string();
        assert!(err.contains("out of range"), "{err}");
    }

    proptest! {
        #[test]
        fn aggregation_ignores_index_order_and_duplicates(
            seed in 0u64..1000,
            perm_seed in 0u64..1000,
        ) {
            let g = ModelGeometry::new(2, 2, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grids: Vec<Vec<f32>> = (0..4)
                .map(|_| (0..g.n_layers * g.n_heads * g.head_dim).map(|_| rng.gen::<f32>()).collect())
                .collect();
            let sample = sample_from_grids(g, "s", grids);

            let indices = vec![0usize, 2, 3];
            let mut shuffled = vec![3usize, 0, 2, 0, 3];
            let mut perm_rng = ChaCha8Rng::seed_from_u64(perm_seed);
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut perm_rng);

            let a = aggregate_features(&sample, &indices).unwrap();
            let b = aggregate_features(&sample, &shuffled).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    fn attention_sample(
        g: ModelGeometry,
        id: &str,
        rows: &dyn Fn(usize, usize) -> Vec<f32>,
        n_positions: usize,
        n_tokens: usize,
    ) -> SampleActivations {
        let tokens = (0..n_tokens)
            .map(|_| {
                let values = vec![0.0f32; g.n_layers * g.n_heads * g.head_dim];
                let mut attention = Vec::with_capacity(g.n_layers * g.n_heads * n_positions);
                for layer in 0..g.n_layers {
                    for head in 0..g.n_heads {
                        attention.extend(rows(layer, head));
                    }
                }
                TokenActivations::new(g, values)
                    .unwrap()
                    .with_attention(attention, n_positions)
                    .unwrap()
            })
            .collect();
        SampleActivations { sample_id: id.into(), tokens }
    }

    fn dump_of(g: ModelGeometry, samples: Vec<SampleActivations>) -> ActivationDump {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("d");
        crate::store::dump::write_dump(&base, g, &samples).unwrap();
        crate::store::dump::read_dump(&base).unwrap()
    }

    #[test]
    fn uniform_attention_profiles_at_visual_fraction() {
        let g = ModelGeometry::new(1, 2, 2);
        let n_positions = 10usize;
        let uniform = move |_l: usize, _h: usize| vec![1.0 / n_positions as f32; n_positions];
        let dump = dump_of(g, vec![attention_sample(g, "s", &uniform, n_positions, 3)]);
        let visual: BTreeSet<usize> = (0..4).collect(); // fraction 0.4
        let heads = vec![HeadId::new(0, 0), HeadId::new(0, 1)];
        let profile = modality_attention_profile(&dump, &heads, &visual).unwrap();
        for (_, v) in profile {
            assert!((v - 0.4).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn point_mass_on_visual_position_profiles_at_one() {
        let g = ModelGeometry::new(1, 1, 2);
        let n_positions = 8usize;
        let point = move |_l: usize, _h: usize| {
            let mut row = vec![0.0f32; n_positions];
            row[2] = 1.0;
            row
        };
        let dump = dump_of(g, vec![attention_sample(g, "s", &point, n_positions, 2)]);
        let visual: BTreeSet<usize> = [2usize, 5].into_iter().collect();
        let profile =
            modality_attention_profile(&dump, &[HeadId::new(0, 0)], &visual).unwrap();
        assert!((profile[&HeadId::new(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn random_rows_match_brute_force() {
        let g = ModelGeometry::new(2, 2, 2);
        let n_positions = 12usize;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        // Pre-draw rows so the closure and the brute force see the same data.
        let mut rows: BTreeMap<(usize, usize), Vec<f32>> = BTreeMap::new();
        for layer in 0..g.n_layers {
            for head in 0..g.n_heads {
                let raw: Vec<f32> = (0..n_positions).map(|_| rng.gen::<f32>()).collect();
                let total: f32 = raw.iter().sum();
                rows.insert((layer, head), raw.iter().map(|v| v / total).collect());
            }
        }
        let rows_ref = rows.clone();
        let lookup = move |l: usize, h: usize| rows_ref[&(l, h)].clone();
        let dump = dump_of(g, vec![attention_sample(g, "s", &lookup, n_positions, 1)]);
        let visual: BTreeSet<usize> = [0usize, 3, 7, 11].into_iter().collect();
        let heads: Vec<HeadId> = g.heads().collect();
        let profile = modality_attention_profile(&dump, &heads, &visual).unwrap();
        for &head in &heads {
            let expected: f64 = visual
                .iter()
                .map(|&p| rows[&(head.layer, head.head)][p] as f64)
                .sum();
            let got = profile[&head];
            assert!((got - expected).abs() < 1e-6, "{head}: {got} vs {expected}");
            assert!((0.0..=1.0 + 1e-6).contains(&got));
        }
    }

    #[test]
    fn profile_requires_attention_channel() {
        let g = ModelGeometry::new(1, 1, 2);
        let dump = dump_of(g, vec![sample_from_grids(g, "s", vec![vec![0.0, 0.0]])]);
        let err = modality_attention_profile(&dump, &[HeadId::new(0, 0)], &BTreeSet::new())
            .unwrap_err()
            .to_string();
        assert!(err.contains("attention channel"), "{err}");
    }
}
