//! Deterministic randomness and runtime configuration helpers.
//!
//! All stochastic stages (embedding training, parameter init, operator
//! dropout, batch shuffling) draw from independent named substreams derived
//! from a single user seed, so runs are reproducible regardless of the order
//! in which stages execute or how work is scheduled across threads.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Substream labels used across the pipeline. Keeping them in one place makes
/// collisions impossible and documents the reproducibility contract.
pub mod streams {
    /// Graph variational autoencoder: init and reparameterization noise.
    pub const GVAE: &str = "gvae";
    /// Forecaster parameter initialization.
    pub const INIT: &str = "init";
    /// Propagation-operator dropout masks.
    pub const DROPOUT: &str = "dropout";
    /// Mini-batch shuffling.
    pub const SHUFFLE: &str = "shuffle";
    /// Synthetic dataset generation.
    pub const SYNTH: &str = "synth";
}

/// Derive a deterministic ChaCha20 generator for a named substream of `seed`.
///
/// The 256-bit state is `SHA-256(seed_le_bytes || label)`, so distinct labels
/// yield statistically independent streams and the mapping is stable across
/// platforms and versions.
pub fn stream_rng(seed: u64, label: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}

/// Standard normal sample via Box–Muller on the generator's uniforms.
///
/// Hand-rolled so the exact sampled sequence is pinned by this crate alone;
/// determinism tests rely on it.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

/// Uniform sample in `[-bound, bound]`.
pub fn uniform_symmetric<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    rng.gen_range(-bound..=bound)
}

/// Minimal numeric CSV plumbing shared by adjacency, speed-series, and
/// embedding files. All files handled here are rectangular grids of reals
/// with at most one header line; errors carry the path and 1-based row/column
/// positions.
pub(crate) mod csvnum {
    use std::io::Write;
    use std::path::Path;

    use crate::error::{Error, Result};

    /// Read a whole file into lines, trimming a UTF-8 BOM and CR line ends.
    pub fn read_lines(path: &Path) -> Result<Vec<String>> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw = raw.strip_prefix('\u{feff}').unwrap_or(&raw);
        Ok(raw
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect())
    }

    /// Parse one comma-separated row of reals. `row` is 1-based for messages.
    pub fn parse_row(line: &str, row: usize, path: &Path) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (col, field) in line.split(',').enumerate() {
            let trimmed = field.trim();
            if trimmed.is_empty() {
                return Err(Error::data(format!(
                    "{}: empty field at row {}, column {}",
                    path.display(),
                    row,
                    col + 1
                )));
            }
            let v: f64 = trimmed.parse().map_err(|_| {
                Error::data(format!(
                    "{}: cannot parse '{}' as a number at row {}, column {}",
                    path.display(),
                    trimmed,
                    row,
                    col + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "{}: non-finite value at row {}, column {}",
                    path.display(),
                    row,
                    col + 1
                )));
            }
            out.push(v);
        }
        Ok(out)
    }

    /// True when the line contains any field that does not parse as a real —
    /// used to auto-detect header rows.
    pub fn looks_like_header(line: &str) -> bool {
        line.split(',')
            .any(|f| f.trim().parse::<f64>().is_err())
    }

    /// Write rows of reals using the shortest round-trip decimal form.
    pub fn write_rows<'a>(
        path: &Path,
        header: Option<&str>,
        rows: impl Iterator<Item = &'a [f64]>,
    ) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut emit = |s: String| -> Result<()> {
            writeln!(w, "{s}").map_err(|e| Error::io(path, e))
        };
        if let Some(h) = header {
            emit(h.to_string())?;
        }
        for row in rows {
            let line = row
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(",");
            emit(line)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Cap the global rayon pool from the `STGF_THREADS` environment variable.
///
/// Call once at process start; later calls are no-ops (the global pool can
/// only be built once). Invalid or absent values leave the default pool.
pub fn configure_threads_from_env() {
    if let Ok(raw) = std::env::var("STGF_THREADS") {
        if let Ok(n) = raw.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
