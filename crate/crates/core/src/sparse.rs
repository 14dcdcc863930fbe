//! Sparse matrices in coordinate form.

use crate::error::{Error, Result};

/// One stored entry `(row, col, value)`, 0-based.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Coordinate-format sparse matrix with entries sorted by `(row, col)` and no
/// duplicates. Used both for observed data `P_Omega(O)` and for gradients
/// supported on the same pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCoo {
    rows: usize,
    cols: usize,
    entries: Vec<Entry>,
}

impl SparseCoo {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    /// Builds from unsorted triplets, validating range, finiteness and
    /// uniqueness.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<Entry> = triplets
            .into_iter()
            .map(|(row, col, value)| Entry { row, col, value })
            .collect();
        for e in &entries {
            if e.row >= rows || e.col >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({}, {}) outside {}x{} matrix",
                    e.row, e.col, rows, cols
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "entry ({}, {}) is not finite",
                    e.row, e.col
                )));
            }
        }
        entries.sort_by_key(|e| (e.row, e.col));
        if let Some(w) = entries
            .windows(2)
            .find(|w| (w[0].row, w[0].col) == (w[1].row, w[1].col))
        {
            return Err(Error::InvalidArgument(format!(
                "duplicate entry ({}, {})",
                w[0].row, w[0].col
            )));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    /// Same pattern as `self`, new values. `values` follows entry order.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.entries.len(), "value count mismatch");
        let entries = self
            .entries
            .iter()
            .zip(values)
            .map(|(e, value)| Entry { value, ..*e })
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.value)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.with_values(self.values().map(|v| v * s).collect())
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(
            self.cols,
            self.rows,
            self.entries.iter().map(|e| (e.col, e.row, e.value)),
        )
        .expect("transpose of a valid matrix is valid")
    }

    pub fn to_dense(&self) -> crate::linalg::DenseMatrix {
        let mut d = crate::linalg::DenseMatrix::zeros(self.rows, self.cols);
        for e in &self.entries {
            d.set(e.row, e.col, e.value);
        }
        d
    }

    /// Looks up `(i, j)` by binary search.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries
            .binary_search_by_key(&(i, j), |e| (e.row, e.col))
            .ok()
            .map(|k| self.entries[k].value)
    }
}
