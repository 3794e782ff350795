//! Report emission: content-addressed run directories and byte-stable
//! writers.
//!
//! Every experiment funnels its outputs through [`ReportWriter`], the one
//! place that touches the filesystem. Directory names embed a digest of the
//! canonical config JSON, so distinct configs never collide and re-running
//! the same config lands on the same path with byte-identical contents.
//! All collections are either `BTreeMap`s or explicitly sorted before
//! formatting; floats are printed with fixed precision.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exp::config::ExperimentConfig;

// ============================================================================
// Content addressing
// ============================================================================

/// Hex digest (first 12 chars of SHA-256) of the config's canonical JSON.
pub fn config_digest(config: &ExperimentConfig) -> Result<String> {
    let canonical = serde_json::to_string(config)?;
    let hash = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(12);
    for byte in hash.iter().take(6) {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

/// The run directory for a config: `<output_dir>/<kind>-<digest>`.
pub fn experiment_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    Ok(config.output_dir.join(format!("{}-{}", config.kind.slug(), config_digest(config)?)))
}

// ============================================================================
// Writer
// ============================================================================

/// Handle on one run directory. Creating it also persists the resolved
/// config, so a run directory is always self-describing.
#[derive(Debug)]
pub struct ReportWriter {
    dir: PathBuf,
}

impl ReportWriter {
    pub fn create(config: &ExperimentConfig) -> Result<ReportWriter> {
        let dir = experiment_dir(config)?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let writer = ReportWriter { dir };
        writer.write_json("config.json", config)?;
        Ok(writer)
    }

    /// A writer rooted at an explicit directory (used by tests and the CLI
    /// when the caller owns directory naming).
    pub fn at(dir: impl Into<PathBuf>) -> Result<ReportWriter> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(ReportWriter { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Pretty-printed JSON plus trailing newline.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.write_text(name, &body)
    }

    pub fn write_text(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    }
}

// ============================================================================
// Formatting helpers
// ============================================================================

/// GitHub-style Markdown table.
pub fn md_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str("| ");
    out.push_str(&headers.join(" | "));
    out.push_str(" |\n|");
    for _ in headers {
        out.push_str(" --- |");
    }
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), headers.len(), "table row width mismatch");
        out.push_str("| ");
        out.push_str(&row.join(" | "));
        out.push_str(" |\n");
    }
    out
}

/// Accuracy cell: four decimals is enough to tell apart 1/4800 steps.
pub fn fmt_acc(v: f64) -> String {
    format!("{v:.4}")
}

/// Accuracy expressed in points (×100), two decimals.
pub fn fmt_points(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Statistic cell (t values, correlations): six decimals.
pub fn fmt_stat(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        format!("{v}")
    }
}

/// p-value cell: scientific notation survives very small values.
pub fn fmt_p(v: f64) -> String {
    format!("{v:.3e}")
}

/// The judge-accuracy cell: populated only when a judge actually ran.
pub fn fmt_llm(v: Option<f64>) -> String {
    match v {
        Some(v) => fmt_acc(v),
        None => "-".to_string(),
    }
}

/// Standard preamble for aggregate tables: how many seeds, and which.
pub fn seeds_line(seeds: &[u64]) -> String {
    let list: Vec<String> = seeds.iter().map(|s| s.to_string()).collect();
    format!("Means over n = {} seeds: [{}].\n", seeds.len(), list.join(", "))
}

// ============================================================================
// Tests
// ============================================================================
