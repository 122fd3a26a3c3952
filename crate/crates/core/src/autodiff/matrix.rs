//! Dense row-major `f64` matrices.
//!
//! This is the single numeric carrier for the whole crate: signals, hidden
//! states, weights, adjacency and propagation operators are all `DenseMatrix`.
//! The heavy kernel (`matmul`) delegates to `matrixmultiply::dgemm`; every
//! other operation is a straightforward loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense matrix of `f64` in row-major layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// All-zeros matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Matrix filled with a constant.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a row-major buffer; checks length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "buffer length {} does not match {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        let m = DenseMatrix { rows, cols, data };
        m.check_finite("from_vec")?;
        Ok(m)
    }

    /// Build from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::config(format!(
                    "row {} has length {} but row 0 has length {}",
                    i,
                    row.len(),
                    c
                )));
            }
            data.extend_from_slice(row);
        }
        DenseMatrix::from_vec(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Error (numerical kind) if any entry is NaN/Inf; `ctx` names the producer.
    pub fn check_finite(&self, ctx: &str) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos / self.cols.max(1), pos % self.cols.max(1));
            return Err(Error::numerical(format!(
                "non-finite value at ({i},{j}) produced by {ctx}"
            )));
        }
        Ok(())
    }

    /// Validate invariants after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::data(format!(
                "matrix buffer length {} does not match {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        if !self.is_finite() {
            return Err(Error::data("matrix contains non-finite entries".to_string()));
        }
        Ok(())
    }

    /// Matrix product via the dgemm kernel.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        dgemm_view(1.0, self, false, other, false, 0.0, &mut out);
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    fn zip(&self, other: &DenseMatrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip(other, "hadamard", |a, b| a * b)
    }

    /// In-place `self += c * other`.
    pub fn add_scaled(&mut self, other: &DenseMatrix, c: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add_scaled", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> DenseMatrix {
        self.map(|v| c * v)
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<DenseMatrix> {
        if start > end || end > self.cols {
            return Err(Error::config(format!(
                "column slice {start}..{end} out of bounds for {} columns",
                self.cols
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(self.rows * w);
        for i in 0..self.rows {
            data.extend_from_slice(&self.data[i * self.cols + start..i * self.cols + end]);
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: w,
            data,
        })
    }

    /// Horizontal concatenation `[self, other]`.
    pub fn concat_cols(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::shape("concat_cols", self.shape(), other.shape()));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum::<f64>().sqrt()
    }
}

/// `c = alpha * op(a) · op(b) + beta * c` where `op` optionally transposes a
/// row-major operand by swapping its strides. Shapes are the caller's
/// responsibility (debug-asserted).
pub(crate) fn dgemm_view(
    alpha: f64,
    a: &DenseMatrix,
    ta: bool,
    b: &DenseMatrix,
    tb: bool,
    beta: f64,
    c: &mut DenseMatrix,
) {
    let (am, ak) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (bk, bn) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    debug_assert_eq!(ak, bk, "dgemm inner dimension");
    debug_assert_eq!(c.rows, am, "dgemm output rows");
    debug_assert_eq!(c.cols, bn, "dgemm output cols");
    let (rsa, csa) = if ta {
        (1isize, a.cols as isize)
    } else {
        (a.cols as isize, 1isize)
    };
    let (rsb, csb) = if tb {
        (1isize, b.cols as isize)
    } else {
        (b.cols as isize, 1isize)
    };
    // Safety: pointers are valid for the asserted shapes; strides describe the
    // row-major (or transposed-view) layout of each buffer.
    unsafe {
        matrixmultiply::dgemm(
            am,
            ak,
            bn,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}
