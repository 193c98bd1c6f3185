//! Row-major feature storage and a compressed sparse row matrix.
//!
//! `CsrMatrix` is deliberately small: square matrices only, sorted column
//! indices per row, no explicit zeros dropped. Everything the propagation
//! code needs (mat-vec, diagonal scaling, symmetric checks) lives here.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows below this nnz are multiplied sequentially; thread dispatch costs more
/// than it saves on tiny systems.
const PAR_NNZ_THRESHOLD: usize = 1 << 15;

/// Dense `n x d` feature matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch {
                expected: n_rows * n_cols,
                found: data.len(),
            });
        }
        Ok(Self {
            data,
            n_rows,
            n_cols,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            data,
            n_rows: rows.len(),
            n_cols,
        })
    }

    pub fn empty(n_cols: usize) -> Self {
        Self {
            data: Vec::new(),
            n_rows: 0,
            n_cols,
        }
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            n_rows: idx.len(),
            n_cols: self.n_cols,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.n_rows > 0 && other.n_rows > 0 && self.n_cols != other.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                found: other.n_cols,
            });
        }
        let n_cols = if self.n_rows > 0 {
            self.n_cols
        } else {
            other.n_cols
        };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            data,
            n_rows: self.n_rows + other.n_rows,
            n_cols,
        })
    }

    /// Fails on the first NaN or infinite entry.
    pub fn check_finite(&self) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            if let Some(col) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i, col });
            }
        }
        Ok(())
    }

    /// Applies `x -> a x + b` column-wise with matrix `a` (d x d) and offset `b`.
    pub fn affine_map(&self, a: &DMatrix<f64>, b: &[f64]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.rows() {
            for r in 0..self.n_cols {
                let mut acc = b[r];
                for (c, v) in row.iter().enumerate() {
                    acc += a[(r, c)] * v;
                }
                data.push(acc);
            }
        }
        Self {
            data,
            n_rows: self.n_rows,
            n_cols: self.n_cols,
        }
    }
}

/// Square sparse matrix in compressed sparse row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            indptr: vec![0; n + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!(
                    "triplet ({i}, {j}) out of bounds for {n}x{n} matrix"
                )));
            }
            rows[i].push((j, v));
        }
        Ok(Self::from_row_lists(n, rows))
    }

    pub(crate) fn from_row_lists(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *values.last_mut().expect("nonempty") += v;
                } else {
                    indices.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored entries of row `i` as `(col, value)`, sorted by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[lo..hi].binary_search(&j) {
            Ok(p) => self.values[lo + p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.triplets().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// `out = self * x`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        let row_dot = |i: usize| -> f64 {
            let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
            self.indices[lo..hi]
                .iter()
                .zip(&self.values[lo..hi])
                .map(|(&j, &v)| v * x[j])
                .sum()
        };
        if self.nnz() >= PAR_NNZ_THRESHOLD {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(i, o)| *o = row_dot(i));
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = row_dot(i);
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `diag(s) * self * diag(s)`, entry-wise `s_i s_j a_ij`.
    pub fn scale_symmetric(&self, s: &[f64]) -> Result<Self> {
        crate::error::check_len(self.n, s.len())?;
        let mut out = self.clone();
        for i in 0..self.n {
            for p in out.indptr[i]..out.indptr[i + 1] {
                let j = out.indices[p];
                out.values[p] *= s[i] * s[j];
            }
        }
        Ok(out)
    }

    /// `scale * self + diag(diag)`, inserting diagonal entries where absent.
    pub fn scaled_plus_diagonal(&self, scale: f64, diag: &[f64]) -> Result<Self> {
        crate::error::check_len(self.n, diag.len())?;
        let rows = (0..self.n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = self.row(i).map(|(j, v)| (j, scale * v)).collect();
                row.push((i, diag[i]));
                row
            })
            .collect();
        Ok(Self::from_row_lists(self.n, rows))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Symmetric permutation `P A P^T`, where row `perm[i]` of the result is row `i` here.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for (i, j, v) in self.triplets() {
            rows[perm[i]].push((perm[j], v));
        }
        Self::from_row_lists(self.n, rows)
    }
}
