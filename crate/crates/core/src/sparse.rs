//! Compressed sparse column matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Sparse matrix in compressed sparse column form. Row indices within a
/// column are strictly increasing; explicit zeros may be stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CscMatrix<T> {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<T>,
}

/// Sparse row or vector as `(index, value)` pairs sorted by index.
pub type SparseVec<T> = Vec<(usize, T)>;

impl<T: Real> CscMatrix<T> {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut counts = vec![0usize; ncols + 1];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::Dimension(format!(
                    "triplet ({i}, {j}) outside {nrows}x{ncols}"
                )));
            }
            counts[j + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![T::zero(); triplets.len()];
        for &(i, j, v) in triplets {
            let p = next[j];
            rows[p] = i;
            vals[p] = v;
            next[j] += 1;
        }
        // Sort each column and merge duplicates.
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        let mut scratch: Vec<(usize, T)> = Vec::new();
        for j in 0..ncols {
            scratch.clear();
            scratch.extend((counts[j]..counts[j + 1]).map(|p| (rows[p], vals[p])));
            scratch.sort_by_key(|e| e.0);
            for &(i, v) in &scratch {
                if row_idx.len() > col_ptr[j] && *row_idx.last().unwrap() == i {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(CscMatrix { nrows, ncols, col_ptr, row_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![T::one(); n])
    }

    pub fn diagonal(d: &[T]) -> Self {
        let n = d.len();
        CscMatrix {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Dense column-major input; zeros are dropped.
    pub fn from_dense(nrows: usize, ncols: usize, data_col_major: &[T]) -> Self {
        let mut t = Vec::new();
        for j in 0..ncols {
            for i in 0..nrows {
                let v = data_col_major[j * nrows + i];
                if v != T::zero() {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &t).expect("in-range triplets")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Entries `(row, value)` of column `j`.
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |p| (self.row_idx[p], self.values[p]))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let rows = &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]];
        match rows.binary_search(&i) {
            Ok(k) => self.values[self.col_ptr[j] + k],
            Err(_) => T::zero(),
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        (0..self.ncols)
            .flat_map(|j| self.col(j).map(move |(i, v)| (i, j, v)))
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t).expect("in-range triplets")
    }

    /// Rows as sparse vectors.
    pub fn rows(&self) -> Vec<SparseVec<T>> {
        let mut rows = vec![Vec::new(); self.nrows];
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                rows[i].push((j, v));
            }
        }
        rows
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.ncols {
            return Err(Error::Dimension(format!(
                "matrix has {} columns, vector has length {}",
                self.ncols,
                x.len()
            )));
        }
        let mut y = vec![T::zero(); self.nrows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == T::zero() {
                continue;
            }
            for (i, v) in self.col(j) {
                y[i] += v * xj;
            }
        }
        Ok(y)
    }

    /// `y = Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.nrows {
            return Err(Error::Dimension(format!(
                "matrix has {} rows, vector has length {}",
                self.nrows,
                x.len()
            )));
        }
        Ok((0..self.ncols)
            .map(|j| self.col(j).map(|(i, v)| v * x[i]).sum())
            .collect())
    }

    /// `xᵀ A x` for square `A`.
    pub fn quad_form(&self, x: &[T]) -> T {
        (0..self.ncols)
            .map(|j| self.col(j).map(|(i, v)| x[i] * v).sum::<T>() * x[j])
            .sum()
    }

    /// `Aᵀ diag(d) A`, with the full symmetric pattern stored.
    pub fn at_diag_a(&self, d: &[T]) -> Self {
        let mut t = Vec::new();
        for (i, row) in self.rows().iter().enumerate() {
            let di = d[i];
            for &(j, aj) in row {
                for &(k, ak) in row {
                    t.push((j, k, di * aj * ak));
                }
            }
        }
        Self::from_triplets(self.ncols, self.ncols, &t).expect("in-range triplets")
    }

    /// `self + other` over the union pattern.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::Dimension("matrix sum with different shapes".into()));
        }
        let mut t = self.triplets();
        t.extend(other.triplets());
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn scale(&self, c: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `self + diag(d)`; the diagonal must already be structurally present
    /// for the pattern to stay unchanged.
    pub fn add_diagonal(&self, d: &[T]) -> Self {
        let mut t = self.triplets();
        t.extend(d.iter().enumerate().map(|(i, &v)| (i, i, v)));
        Self::from_triplets(self.nrows, self.ncols, &t).expect("in-range triplets")
    }

    pub fn diagonal_values(&self) -> Vec<T> {
        (0..self.ncols.min(self.nrows)).map(|i| self.get(i, i)).collect()
    }

    /// Maximum absolute asymmetry `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for (i, j, v) in self.triplets() {
            worst = worst.max((v - self.get(j, i)).abs());
        }
        worst
    }

    /// Symmetric permutation `P A Pᵀ` with `new[perm_inv[i]] = old[i]`.
    pub fn permute_symmetric(&self, perm_inv: &[usize]) -> Self {
        let t: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(i, j, v)| (perm_inv[i], perm_inv[j], v))
            .collect();
        Self::from_triplets(self.nrows, self.ncols, &t).expect("in-range triplets")
    }

    /// Column-major dense copy.
    pub fn to_dense(&self) -> Vec<T> {
        let mut d = vec![T::zero(); self.nrows * self.ncols];
        for (i, j, v) in self.triplets() {
            d[j * self.nrows + i] += v;
        }
        d
    }

    /// Dense `f64` copy, for test oracles and small dense paths.
    pub fn to_dense_f64(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v.f64();
        }
        d
    }
}
