//! Graph representations, adjacency normalization, and the stochastic
//! propagation operator.
//!
//! The forecaster never consumes a raw adjacency matrix: it propagates
//! signals through a *normalized* operator, optionally corrected by a
//! trainable matrix φ and sparsified by dropout. Normalization comes in two
//! flavors: plain symmetric normalization `D^{-1/2} A D^{-1/2}`, and the
//! self-loop variant `D̃^{-1/2}(A+I)D̃^{-1/2}` used for propagation so each
//! node retains its own signal.
//!
//! The learned operator is `normalize_with_self_loops(A_map) + φ`:
//! normalization is applied once to the inferred adjacency, and φ corrects
//! the normalized operator additively. φ may be asymmetric and may hold
//! negative entries; renormalizing such a matrix would be ill-defined, which
//! is why the correction lives outside the normalization.

use std::path::Path;

use rand::Rng;

use crate::autodiff::{DenseMatrix, Graph, NodeId};
use crate::error::{Error, Result};
use crate::util::csvnum;

/// Weighted adjacency matrix of an undirected or directed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    weights: DenseMatrix,
}

impl Adjacency {
    /// Wrap a square, finite weight matrix.
    pub fn new(weights: DenseMatrix) -> Result<Self> {
        if weights.rows() != weights.cols() {
            return Err(Error::data(format!(
                "adjacency matrix must be square, got {}x{}",
                weights.rows(),
                weights.cols()
            )));
        }
        weights
            .check_finite("adjacency")
            .map_err(|e| Error::data(e.to_string()))?;
        Ok(Adjacency { weights })
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn into_weights(self) -> DenseMatrix {
        self.weights
    }

    /// Validate the stricter invariants of an observed road topology:
    /// entries exactly 0 or 1 and an all-zero diagonal.
    pub fn validate_topology(&self) -> Result<()> {
        let n = self.n();
        for i in 0..n {
            for j in 0..n {
                let v = self.weights.get(i, j);
                if v != 0.0 && v != 1.0 {
                    return Err(Error::data(format!(
                        "topology entry ({i},{j}) is {v}, expected 0 or 1"
                    )));
                }
            }
            if self.weights.get(i, i) != 0.0 {
                return Err(Error::data(format!(
                    "topology has a self-loop at node {i}; diagonal must be zero"
                )));
            }
        }
        Ok(())
    }

    /// Max absolute asymmetry `|A - Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.weights.get(i, j) - self.weights.get(j, i)).abs());
            }
        }
        worst
    }

    /// Read an `n×n` comma-separated matrix with no header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let lines = csvnum::read_lines(path)?;
        let rows: Vec<&String> = lines.iter().filter(|l| !l.trim().is_empty()).collect();
        if rows.is_empty() {
            return Err(Error::data(format!("{}: empty adjacency file", path.display())));
        }
        let n = rows.len();
        let mut parsed: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (i, line) in rows.iter().enumerate() {
            let row = csvnum::parse_row(line, i + 1, path)?;
            if row.len() != n {
                return Err(Error::data(format!(
                    "{}: adjacency must be square; {} rows but row {} has {} columns",
                    path.display(),
                    n,
                    i + 1,
                    row.len()
                )));
            }
            parsed.push(row);
        }
        let weights = DenseMatrix::from_rows(&parsed).map_err(|e| Error::data(e.to_string()))?;
        Adjacency::new(weights)
    }

    /// Write as an `n×n` comma-separated matrix with no header, using
    /// shortest round-trip decimals.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let rows = (0..self.n()).map(|i| self.weights.row(i));
        csvnum::write_rows(path, None, rows)
    }
}

/// Normalized (and possibly corrected) operator the forecaster propagates
/// signals through. May be asymmetric and carry negative entries once a
/// learned correction is added.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperator {
    matrix: DenseMatrix,
}

impl PropagationOperator {
    pub fn new(matrix: DenseMatrix) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(Error::config(format!(
                "propagation operator must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        matrix.check_finite("propagation operator")?;
        Ok(PropagationOperator { matrix })
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }
}

fn check_nonnegative(adj: &Adjacency) -> Result<()> {
    let n = adj.n();
    for i in 0..n {
        for j in 0..n {
            let v = adj.weights().get(i, j);
            if v < 0.0 {
                return Err(Error::data(format!(
                    "adjacency entry ({i},{j}) is negative ({v}); normalization requires nonnegative weights"
                )));
            }
        }
    }
    Ok(())
}

/// Symmetric normalization `D^{-1/2} A D^{-1/2}` with `D = diag(row sums)`.
///
/// Fails if any node has zero degree: its scaling is undefined.
pub fn normalize(adj: &Adjacency) -> Result<PropagationOperator> {
    check_nonnegative(adj)?;
    let n = adj.n();
    let a = adj.weights();
    let mut inv_sqrt = vec![0.0; n];
    for i in 0..n {
        let d: f64 = a.row(i).iter().sum();
        if d <= 0.0 {
            return Err(Error::numerical(format!(
                "node {i} has zero degree; the graph is degenerate and cannot be normalized"
            )));
        }
        inv_sqrt[i] = 1.0 / d.sqrt();
    }
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, inv_sqrt[i] * a.get(i, j) * inv_sqrt[j]);
        }
    }
    PropagationOperator::new(out)
}

/// Self-loop normalization `D̃^{-1/2}(A+I)D̃^{-1/2}` with
/// `D̃ = diag(row sums of A+I)`.
///
/// Always well-defined for nonnegative input: the self-loop guarantees every
/// degree is at least 1.
pub fn normalize_with_self_loops(adj: &Adjacency) -> Result<PropagationOperator> {
    check_nonnegative(adj)?;
    let n = adj.n();
    let a = adj.weights();
    let mut inv_sqrt = vec![0.0; n];
    for i in 0..n {
        let d: f64 = a.row(i).iter().sum::<f64>() + 1.0;
        inv_sqrt[i] = 1.0 / d.sqrt();
    }
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
            out.set(i, j, inv_sqrt[i] * v * inv_sqrt[j]);
        }
    }
    PropagationOperator::new(out)
}

pub fn check_dropout_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!(
            "dropout probability must satisfy 0 <= p < 1, got {p}"
        )));
    }
    Ok(())
}

/// Sample an inverted-dropout mask: entries are `1/(1-p)` with probability
/// `1-p` and `0` otherwise, so the mask has unit expectation entrywise.
pub fn sample_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<DenseMatrix> {
    check_dropout_p(p)?;
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let data: Vec<f64> = (0..n * n)
        .map(|_| if rng.gen_bool(keep) { scale } else { 0.0 })
        .collect();
    DenseMatrix::from_vec(n, n, data)
}

fn check_phi_shape(base: &PropagationOperator, phi: &DenseMatrix) -> Result<()> {
    if phi.shape() != base.matrix().shape() {
        return Err(Error::shape(
            "operator correction",
            base.matrix().shape(),
            phi.shape(),
        ));
    }
    Ok(())
}

/// Draw a sparsified operator `(base + φ) ⊙ m / (1-p)` with an iid
/// Bernoulli(1-p) mask. Inverted scaling makes the expectation exactly
/// `base + φ`.
pub fn sample_dropout_operator<R: Rng + ?Sized>(
    base: &PropagationOperator,
    phi: &DenseMatrix,
    p: f64,
    rng: &mut R,
) -> Result<PropagationOperator> {
    check_phi_shape(base, phi)?;
    let mask = sample_mask(base.n(), p, rng)?;
    let corrected = base.matrix().add(phi)?;
    PropagationOperator::new(corrected.hadamard(&mask)?)
}

/// Deterministic operator used at evaluation time: `base + φ`, no dropout.
pub fn eval_operator(base: &PropagationOperator, phi: &DenseMatrix) -> Result<PropagationOperator> {
    check_phi_shape(base, phi)?;
    PropagationOperator::new(base.matrix().add(phi)?)
}

/// Tape-level operator `(base + φ) ⊙ mask`, differentiable w.r.t. φ.
///
/// `mask` should come from [`sample_mask`] during training (it already embeds
/// the `1/(1-p)` scaling) and be `None` at evaluation time.
pub fn operator_node(
    graph: &mut Graph,
    base: &PropagationOperator,
    phi: NodeId,
    mask: Option<&DenseMatrix>,
) -> Result<NodeId> {
    let base_const = graph.constant(base.matrix().clone())?;
    let corrected = graph.add(base_const, phi)?;
    match mask {
        Some(m) => {
            let mask_const = graph.constant(m.clone())?;
            graph.mul(corrected, mask_const)
        }
        None => Ok(corrected),
    }
}
