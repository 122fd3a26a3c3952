//! MAP graph-structure inference.
//!
//! When only a coarse road topology is observed, the pipeline infers a
//! weighted graph in three stages:
//!
//! 1. [`train_gvae`] — learn node embeddings with a graph variational
//!    autoencoder over the observed topology;
//! 2. [`pairwise_distances`] — squared Euclidean distances between
//!    embeddings;
//! 3. [`learn_graph`] — solve a convex smoothness program (linear fidelity +
//!    log-barrier on degrees + quadratic density term) with a primal-dual
//!    splitting method, yielding a symmetric nonnegative adjacency whose
//!    every node has positive degree.

mod gvae;
mod solver;

use std::path::Path;

pub use gvae::{reconstruction_probabilities, train_gvae, train_gvae_with_history, GvaeConfig};
pub use solver::{
    calibrate_beta, learn_graph, learn_graph_with_stats, objective, reference_minimize,
    weight_density, GraphLearnConfig, SolveStats,
};

use crate::autodiff::DenseMatrix;
use crate::error::{Error, Result};
use crate::util::csvnum;

/// Node embeddings: one row per node, `dim ≥ 2` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: DenseMatrix,
}

impl EmbeddingSet {
    pub fn new(vectors: DenseMatrix) -> Result<Self> {
        if vectors.cols() < 2 {
            return Err(Error::config(format!(
                "embeddings need dimension >= 2, got {}",
                vectors.cols()
            )));
        }
        vectors.check_finite("embeddings")?;
        Ok(EmbeddingSet { vectors })
    }

    pub fn n(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &DenseMatrix {
        &self.vectors
    }

    /// Write as CSV with a `dim=<d>` header line.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let header = format!("dim={}", self.dim());
        let rows = (0..self.n()).map(|i| self.vectors.row(i));
        csvnum::write_rows(path, Some(&header), rows)
    }

    /// Read the format written by [`EmbeddingSet::to_csv`].
    pub fn from_csv(path: &Path) -> Result<Self> {
        let lines = csvnum::read_lines(path)?;
        let mut it = lines.iter().filter(|l| !l.trim().is_empty());
        let header = it
            .next()
            .ok_or_else(|| Error::data(format!("{}: empty embeddings file", path.display())))?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| {
                Error::data(format!(
                    "{}: expected a 'dim=<d>' header line, found '{}'",
                    path.display(),
                    header
                ))
            })?;
        let mut rows = Vec::new();
        for (i, line) in it.enumerate() {
            let row = csvnum::parse_row(line, i + 2, path)?;
            if row.len() != dim {
                return Err(Error::data(format!(
                    "{}: row {} has {} values, header says dim={}",
                    path.display(),
                    i + 2,
                    row.len(),
                    dim
                )));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::data(format!(
                "{}: no embedding rows after the header",
                path.display()
            )));
        }
        let vectors = DenseMatrix::from_rows(&rows).map_err(|e| Error::data(e.to_string()))?;
        EmbeddingSet::new(vectors)
    }
}

/// Symmetric nonnegative pairwise-distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    z: DenseMatrix,
}

impl DistanceMatrix {
    pub fn new(z: DenseMatrix) -> Result<Self> {
        if z.rows() != z.cols() {
            return Err(Error::config(format!(
                "distance matrix must be square, got {}x{}",
                z.rows(),
                z.cols()
            )));
        }
        z.check_finite("distance matrix")?;
        let n = z.rows();
        for p in 0..n {
            if z.get(p, p) != 0.0 {
                return Err(Error::config(format!(
                    "distance matrix violates its contract: nonzero diagonal at ({p},{p})"
                )));
            }
            for q in 0..n {
                let v = z.get(p, q);
                if v < 0.0 {
                    return Err(Error::config(format!(
                        "distance matrix violates its contract: negative entry at ({p},{q})"
                    )));
                }
                if z.get(q, p) != v {
                    return Err(Error::config(format!(
                        "distance matrix violates its contract: asymmetric at ({p},{q})"
                    )));
                }
            }
        }
        Ok(DistanceMatrix { z })
    }

    pub fn n(&self) -> usize {
        self.z.rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.z
    }

    /// Upper-triangular entries in edge order (0,1), (0,2), …, (n−2,n−1).
    pub(crate) fn upper_tri(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for p in 0..n {
            for q in (p + 1)..n {
                out.push(self.z.get(p, q));
            }
        }
        out
    }
}

/// Squared Euclidean distances between embedding rows:
/// `Z_pq = ‖e_p − e_q‖²`.
pub fn pairwise_distances(emb: &EmbeddingSet) -> DistanceMatrix {
    let n = emb.n();
    let e = emb.vectors();
    let mut z = DenseMatrix::zeros(n, n);
    for p in 0..n {
        for q in (p + 1)..n {
            let mut d = 0.0;
            for k in 0..emb.dim() {
                let diff = e.get(p, k) - e.get(q, k);
                d += diff * diff;
            }
            z.set(p, q, d);
            z.set(q, p, d);
        }
    }
    DistanceMatrix { z }
}
