//! Ranking probed heads and selecting the cognitive set.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::train::ProbeResult;
use crate::types::{CognitiveFunction, HeadId, ModelGeometry};

/// Order heads by held-out accuracy, descending; ties resolve to the
/// earlier head in layer-major order so rankings are reproducible.
pub fn rank_heads(results: &[ProbeResult], geometry: ModelGeometry) -> Result<Vec<(HeadId, f64)>> {
    let mut seen = BTreeSet::new();
    for r in results {
        geometry.validate_head(r.head)?;
        if !seen.insert(r.head) {
            return Err(Error::Probe(format!("duplicate probe result for head {}", r.head)));
        }
    }
    if seen.len() != geometry.grid_size() {
        return Err(Error::Probe(format!(
            "ranking needs one result per head: got {} of {}",
            seen.len(),
            geometry.grid_size()
        )));
    }
    let mut ranked: Vec<(HeadId, f64)> =
        results.iter().map(|r| (r.head, r.test_accuracy)).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Take the top `fraction` of the grid: ⌈fraction × grid size⌉ heads off
/// the front of the ranking.
pub fn select_cognitive_heads(
    ranking: &[(HeadId, f64)],
    top_fraction: f64,
) -> Result<BTreeSet<HeadId>> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Probe(format!(
            "top_fraction must lie in (0, 1], got {top_fraction}"
        )));
    }
    let n = (top_fraction * ranking.len() as f64).ceil() as usize;
    Ok(ranking.iter().take(n).map(|(h, _)| *h).collect())
}

// ============================================================================
// Heatmap grid
// ============================================================================

/// Per-function accuracy grid, plus the display cutoff used when rendering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub function: CognitiveFunction,
    pub geometry: ModelGeometry,
    /// Accuracies in layer-major order (layer 0 head 0, layer 0 head 1, ...).
    pub values: Vec<f64>,
    /// Rendering floor: cells at or below this draw as the coldest color.
    pub display_cap: f64,
}

impl HeatmapGrid {
    pub const DEFAULT_DISPLAY_CAP: f64 = 0.60;

    pub fn from_results(
        function: CognitiveFunction,
        geometry: ModelGeometry,
        results: &[ProbeResult],
    ) -> Result<HeatmapGrid> {
        let ranked = rank_heads(results, geometry)?; // validates completeness
        drop(ranked);
        let mut values = vec![0.0f64; geometry.grid_size()];
        for r in results {
            if !(0.0..=1.0).contains(&r.test_accuracy) {
                return Err(Error::Probe(format!(
                    "head {} accuracy {} outside [0,1]",
                    r.head, r.test_accuracy
                )));
            }
            values[r.head.flat(geometry.n_heads)] = r.test_accuracy;
        }
        Ok(HeatmapGrid {
            function,
            geometry,
            values,
            display_cap: Self::DEFAULT_DISPLAY_CAP,
        })
    }

    pub fn value(&self, head: HeadId) -> f64 {
        self.values[head.flat(self.geometry.n_heads)]
    }

    /// CSV with one row per layer and one column per head.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for head in 0..self.geometry.n_heads {
            out.push_str(&format!(",head_{head}"));
        }
        out.push('\n');
        for layer in 0..self.geometry.n_layers {
            out.push_str(&layer.to_string());
            for head in 0..self.geometry.n_heads {
                out.push_str(&format!(",{:.6}", self.value(HeadId::new(layer, head))));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Render a PNG: layers as rows, heads as columns, `cell` pixels per
    /// head. Values at or below the display cap share the coldest color;
    /// the cap-to-1 range sweeps dark blue to warm yellow.
    pub fn render_png(&self, path: &Path, cell: u32) -> Result<()> {
        if cell == 0 {
            return Err(Error::Probe("heatmap cell size must be positive".into()));
        }
        let width = self.geometry.n_heads as u32 * cell;
        let height = self.geometry.n_layers as u32 * cell;
        let mut image = image::RgbImage::new(width, height);
        for (y, x, pixel) in image.enumerate_pixels_mut().map(|(x, y, p)| (y, x, p)) {
            let layer = (y / cell) as usize;
            let head = (x / cell) as usize;
            let v = self.values[layer * self.geometry.n_heads + head];
            *pixel = image::Rgb(Self::color(v, self.display_cap));
        }
        image.save(path).map_err(|e| Error::Probe(format!("{}: {e}", path.display())))
    }

    /// Map an accuracy to RGB. Everything at or below `cap` is the cold
    /// endpoint, 1.0 is the hot endpoint.
    fn color(value: f64, cap: f64) -> [u8; 3] {
        let t = ((value.clamp(0.0, 1.0) - cap).max(0.0) / (1.0 - cap)).clamp(0.0, 1.0);
        let r = (255.0 * t) as u8;
        let g = (224.0 * t * t) as u8;
        let b = (96.0 + 64.0 * (1.0 - t)) as u8;
        [r, g, b]
    }
}
