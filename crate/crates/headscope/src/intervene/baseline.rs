//! Random-baseline head selection for cognitive-vs-random contrasts.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{HeadId, ModelGeometry};

/// Draw `n` heads uniformly without replacement from the grid, never
/// touching `exclude`. Candidates are enumerated layer-major before the
/// seeded shuffle, so the draw is reproducible across platforms.
pub fn select_random_baseline(
    geometry: ModelGeometry,
    n: usize,
    exclude: &BTreeSet<HeadId>,
    seed: u64,
) -> Result<BTreeSet<HeadId>> {
    for &head in exclude {
        geometry.validate_head(head)?;
    }
    let candidates: Vec<HeadId> = geometry.heads().filter(|h| !exclude.contains(h)).collect();
    if n > candidates.len() {
        return Err(Error::Intervention(format!(
            "cannot draw {n} baseline heads from {} non-excluded slots",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(candidates.choose_multiple(&mut rng, n).copied().collect())
}

/// |a ∩ b| / |a ∪ b|; 1.0 for two empty sets.
pub fn jaccard(a: &BTreeSet<HeadId>, b: &BTreeSet<HeadId>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}
