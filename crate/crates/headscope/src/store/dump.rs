//! On-disk activation dump format.
//!
//! A dump is a pair of files: `<name>.manifest.json` describing the layout
//! and `<name>.bin` holding raw little-endian f32 payloads. Per sample the
//! payload is laid out sample-major:
//!
//! ```text
//! [token 0: layer 0 head 0 dims.., head 1 dims.., ...; layer 1 ...]
//! [token 1: ...]
//! ...
//! [attention channel, if present: token-major rows of n_positions floats
//!  per (layer, head), covering the prompt positions of that sample]
//! ```
//!
//! Offsets in the manifest are validated on both write and read, so a
//! truncated or reshuffled payload fails loudly instead of shearing
//! activations across samples.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ModelGeometry;

pub const SCHEMA_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";

// ============================================================================
// Manifest
// ============================================================================

/// Index entry for one sample in the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleIndexEntry {
    pub sample_id: String,
    /// Number of generated tokens whose activations were captured.
    pub n_tokens: usize,
    /// Absolute byte offset of this sample's block in the payload file.
    pub byte_offset: u64,
    /// Attention-row length (the sample's prompt length). 0 when the dump
    /// carries no attention channel.
    #[serde(default)]
    pub n_positions: usize,
}

/// Self-describing header for a dump payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpManifest {
    pub schema_version: u32,
    pub dtype: String,
    pub geometry: ModelGeometry,
    pub has_attention_channel: bool,
    pub sample_index: Vec<SampleIndexEntry>,
}

impl DumpManifest {
    /// Bytes occupied by one sample's value grid.
    pub fn value_bytes(&self, n_tokens: usize) -> u64 {
        (n_tokens * self.geometry.n_layers * self.geometry.n_heads * self.geometry.head_dim * 4)
            as u64
    }

    /// Bytes occupied by one sample's attention channel (0 when absent).
    pub fn attention_bytes(&self, n_tokens: usize, n_positions: usize) -> u64 {
        if self.has_attention_channel {
            (n_tokens * self.geometry.n_layers * self.geometry.n_heads * n_positions * 4) as u64
        } else {
            0
        }
    }

    /// Check offsets are strictly increasing and consistent with per-sample
    /// block sizes; returns the expected total payload size in bytes.
    pub fn validate(&self) -> Result<u64> {
        self.geometry.validate()?;
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Store(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.dtype != DTYPE {
            return Err(Error::Store(format!("unsupported dtype {:?}", self.dtype)));
        }
        let mut expected_offset = 0u64;
        for entry in &self.sample_index {
            if entry.byte_offset != expected_offset {
                return Err(Error::Store(format!(
                    "sample {:?}: byte_offset {} does not match running total {}",
                    entry.sample_id, entry.byte_offset, expected_offset
                )));
            }
            if self.has_attention_channel && entry.n_tokens > 0 && entry.n_positions == 0 {
                return Err(Error::Store(format!(
                    "sample {:?}: attention channel present but n_positions is 0",
                    entry.sample_id
                )));
            }
            expected_offset += self.value_bytes(entry.n_tokens)
                + self.attention_bytes(entry.n_tokens, entry.n_positions);
        }
        Ok(expected_offset)
    }
}

// ============================================================================
// In-memory activations
// ============================================================================

/// Activations captured for one generated token: the per-head value vectors
/// at the hook point (post any intervention, pre residual merge), plus the
/// head's attention row over the prompt positions when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenActivations {
    geometry: ModelGeometry,
    /// Layer-major, head-major, then dim: `n_layers * n_heads * head_dim`.
    values: Vec<f32>,
    /// `n_layers * n_heads * n_positions` attention mass over the prompt,
    /// or empty when attention capture was off.
    attention: Vec<f32>,
    n_positions: usize,
}

impl TokenActivations {
    pub fn new(geometry: ModelGeometry, values: Vec<f32>) -> Result<Self> {
        let expected = geometry.n_layers * geometry.n_heads * geometry.head_dim;
        if values.len() != expected {
            return Err(Error::Store(format!(
                "value grid has {} floats, geometry wants {expected}",
                values.len()
            )));
        }
        Ok(TokenActivations { geometry, values, attention: Vec::new(), n_positions: 0 })
    }

    pub fn with_attention(mut self, attention: Vec<f32>, n_positions: usize) -> Result<Self> {
        let expected = self.geometry.n_layers * self.geometry.n_heads * n_positions;
        if attention.len() != expected {
            return Err(Error::Store(format!(
                "attention channel has {} floats, expected {expected}",
                attention.len()
            )));
        }
        self.attention = attention;
        self.n_positions = n_positions;
        Ok(self)
    }

    pub fn geometry(&self) -> ModelGeometry {
        self.geometry
    }

    pub fn has_attention(&self) -> bool {
        !self.attention.is_empty()
    }

    pub fn n_positions(&self) -> usize {
        self.n_positions
    }

    /// The head's value vector (`head_dim` floats).
    pub fn head_values(&self, layer: usize, head: usize) -> &[f32] {
        let d = self.geometry.head_dim;
        let base = (layer * self.geometry.n_heads + head) * d;
        &self.values[base..base + d]
    }

    /// The head's attention mass over prompt positions (`n_positions` floats).
    pub fn head_attention(&self, layer: usize, head: usize) -> &[f32] {
        let base = (layer * self.geometry.n_heads + head) * self.n_positions;
        &self.attention[base..base + self.n_positions]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn attention(&self) -> &[f32] {
        &self.attention
    }
}

/// All captured activations for one sample (one generation run).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleActivations {
    pub sample_id: String,
    pub tokens: Vec<TokenActivations>,
}

// ============================================================================
// Write / read
// ============================================================================

fn manifest_path(base: &Path) -> PathBuf {
    base.with_extension("manifest.json")
}

fn payload_path(base: &Path) -> PathBuf {
    base.with_extension("bin")
}

/// Write a dump under `base` (extension is replaced): `base.manifest.json`
/// plus `base.bin`. All samples must share the geometry; either every sample
/// carries an attention channel or none does.
pub fn write_dump(base: &Path, geometry: ModelGeometry, samples: &[SampleActivations]) -> Result<DumpManifest> {
    geometry.validate()?;
    let has_attention = samples
        .iter()
        .flat_map(|s| s.tokens.first())
        .map(|t| t.has_attention())
        .next()
        .unwrap_or(false);

    let mut payload: Vec<u8> = Vec::new();
    let mut index = Vec::with_capacity(samples.len());
    for sample in samples {
        let offset = payload.len() as u64;
        let mut n_positions = 0usize;
        for token in &sample.tokens {
            if token.geometry() != geometry {
                return Err(Error::Store(format!(
                    "sample {:?}: token geometry differs from dump geometry",
                    sample.sample_id
                )));
            }
            if token.has_attention() != has_attention {
                return Err(Error::Store(format!(
                    "sample {:?}: mixed attention-channel presence within dump",
                    sample.sample_id
                )));
            }
            if has_attention {
                if n_positions == 0 {
                    n_positions = token.n_positions();
                } else if token.n_positions() != n_positions {
                    return Err(Error::Store(format!(
                        "sample {:?}: attention row length changed mid-sample",
                        sample.sample_id
                    )));
                }
            }
            for v in token.values() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        if has_attention {
            for token in &sample.tokens {
                for v in token.attention() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        index.push(SampleIndexEntry {
            sample_id: sample.sample_id.clone(),
            n_tokens: sample.tokens.len(),
            byte_offset: offset,
            n_positions,
        });
    }

    let manifest = DumpManifest {
        schema_version: SCHEMA_VERSION,
        dtype: DTYPE.to_string(),
        geometry,
        has_attention_channel: has_attention,
        sample_index: index,
    };
    let expected = manifest.validate()?;
    debug_assert_eq!(expected, payload.len() as u64);

    let ppath = payload_path(base);
    std::fs::write(&ppath, &payload).map_err(|e| Error::io(ppath.display().to_string(), e))?;
    let mpath = manifest_path(base);
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&mpath, json).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    Ok(manifest)
}

/// A dump loaded back into memory.
#[derive(Debug, Clone)]
pub struct ActivationDump {
    pub manifest: DumpManifest,
    pub samples: Vec<SampleActivations>,
}

impl ActivationDump {
    pub fn sample(&self, sample_id: &str) -> Option<&SampleActivations> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }
}

/// Read a dump written by [`write_dump`]. The payload length must match the
/// manifest exactly.
pub fn read_dump(base: &Path) -> Result<ActivationDump> {
    let mpath = manifest_path(base);
    let manifest_bytes =
        std::fs::read(&mpath).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    let manifest: DumpManifest = serde_json::from_slice(&manifest_bytes)?;
    let expected_len = manifest.validate()?;

    let ppath = payload_path(base);
    let mut payload = Vec::new();
    std::fs::File::open(&ppath)
        .and_then(|mut f| f.read_to_end(&mut payload))
        .map_err(|e| Error::io(ppath.display().to_string(), e))?;
    if payload.len() as u64 != expected_len {
        return Err(Error::Store(format!(
            "payload is {} bytes, manifest expects {expected_len}",
            payload.len()
        )));
    }

    let g = manifest.geometry;
    let mut samples = Vec::with_capacity(manifest.sample_index.len());
    for entry in &manifest.sample_index {
        let mut cursor = entry.byte_offset as usize;
        let read_f32s = |n: usize, payload: &[u8], cursor: &mut usize| -> Vec<f32> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let bytes: [u8; 4] = payload[*cursor..*cursor + 4].try_into().unwrap();
                out.push(f32::from_le_bytes(bytes));
                *cursor += 4;
            }
            out
        };
        let grid = g.n_layers * g.n_heads * g.head_dim;
        let mut tokens = Vec::with_capacity(entry.n_tokens);
        for _ in 0..entry.n_tokens {
            let values = read_f32s(grid, &payload, &mut cursor);
            tokens.push(TokenActivations::new(g, values)?);
        }
        if manifest.has_attention_channel {
            let row_block = g.n_layers * g.n_heads * entry.n_positions;
            for token in tokens.iter_mut() {
                let attention = read_f32s(row_block, &payload, &mut cursor);
                *token = token.clone().with_attention(attention, entry.n_positions)?;
            }
        }
        samples.push(SampleActivations { sample_id: entry.sample_id.clone(), tokens });
    }
    Ok(ActivationDump { manifest, samples })
}
