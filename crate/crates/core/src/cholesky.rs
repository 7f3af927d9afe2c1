//! Sparse Cholesky factorization with a minimum-degree ordering, and the
//! Takahashi recursion for selected entries of the inverse.
//!
//! The factor is computed row by row (up-looking) on the symmetrically
//! permuted matrix `P A Pᵀ = L Lᵀ`. Symbolic analysis (ordering,
//! elimination tree, column counts) depends only on the sparsity pattern
//! and is shared between numeric factorizations of matrices with the same
//! pattern, e.g. successive Newton systems or `Q + diag(δ)` perturbations.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::CscMatrix;

const NONE: usize = usize::MAX;

/// Minimum-degree ordering of the symmetric pattern of `a`, returned as
/// `perm[new] = old`. Ties are broken by the smallest index so the result
/// is deterministic.
pub fn minimum_degree_order<T: Real>(a: &CscMatrix<T>) -> Vec<usize> {
    let n = a.ncols();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (i, j, _) in a.triplets() {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut eliminated = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !eliminated[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .expect("vertex left");
        eliminated[v] = true;
        perm.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &u in &nbrs {
            adj[u].remove(&v);
            for &w in &nbrs {
                if w != u {
                    adj[u].insert(w);
                }
            }
        }
        adj[v].clear();
    }
    perm
}

/// Pattern-only analysis shared by numeric factorizations.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    n: usize,
    perm: Vec<usize>,
    perm_inv: Vec<usize>,
    parent: Vec<usize>,
    l_col_ptr: Vec<usize>,
    /// Pattern of the analysed matrix, for compatibility checks.
    a_col_ptr: Vec<usize>,
    a_row_idx: Vec<usize>,
}

/// Upper triangle of `P A Pᵀ` in CSC form (rows ≤ column).
struct UpperPermuted<T> {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<T>,
}

fn upper_permuted<T: Real>(a: &CscMatrix<T>, perm_inv: &[usize]) -> UpperPermuted<T> {
    let n = a.ncols();
    let mut cols: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
    for (i, j, v) in a.triplets() {
        let (pi, pj) = (perm_inv[i], perm_inv[j]);
        if pi <= pj {
            cols[pj].push((pi, v));
        }
    }
    let mut col_ptr = vec![0];
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    for c in cols.iter_mut() {
        c.sort_by_key(|e| e.0);
        for &(i, v) in c.iter() {
            row_idx.push(i);
            values.push(v);
        }
        col_ptr.push(row_idx.len());
    }
    UpperPermuted { col_ptr, row_idx, values }
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal), written to
/// `stack[top..n]` in topological order. Returns `top`.
fn ereach(
    col_ptr: &[usize],
    row_idx: &[usize],
    k: usize,
    parent: &[usize],
    stack: &mut [usize],
    mark: &mut [bool],
) -> usize {
    let n = parent.len();
    let mut top = n;
    mark[k] = true;
    let mut path = Vec::new();
    for &i0 in &row_idx[col_ptr[k]..col_ptr[k + 1]] {
        if i0 > k {
            continue;
        }
        let mut i = i0;
        path.clear();
        while !mark[i] {
            path.push(i);
            mark[i] = true;
            i = parent[i];
            if i == NONE {
                break;
            }
        }
        while let Some(v) = path.pop() {
            top -= 1;
            stack[top] = v;
        }
    }
    for &v in &stack[top..n] {
        mark[v] = false;
    }
    mark[k] = false;
    top
}

impl SymbolicCholesky {
    /// Analyse a symmetric matrix (both triangles stored).
    pub fn analyse<T: Real>(a: &CscMatrix<T>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension("Cholesky of a non-square matrix".into()));
        }
        let perm = minimum_degree_order(a);
        Ok(Self::with_ordering(a, perm))
    }

    /// Analyse with a caller-supplied ordering `perm[new] = old`.
    pub fn with_ordering<T: Real>(a: &CscMatrix<T>, perm: Vec<usize>) -> Self {
        let n = a.ncols();
        let mut perm_inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            perm_inv[old] = new;
        }
        let c = upper_permuted(a, &perm_inv);

        // Elimination tree of the permuted matrix.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &i0 in &c.row_idx[c.col_ptr[k]..c.col_ptr[k + 1]] {
                let mut i = i0;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // Column counts from the row patterns.
        let mut counts = vec![1usize; n];
        let mut stack = vec![0; n];
        let mut mark = vec![false; n];
        for k in 0..n {
            let top = ereach(&c.col_ptr, &c.row_idx, k, &parent, &mut stack, &mut mark);
            for &i in &stack[top..n] {
                counts[i] += 1;
            }
        }
        let mut l_col_ptr = vec![0; n + 1];
        for j in 0..n {
            l_col_ptr[j + 1] = l_col_ptr[j] + counts[j];
        }
        SymbolicCholesky {
            n,
            perm,
            perm_inv,
            parent,
            l_col_ptr,
            a_col_ptr: a.col_ptr().to_vec(),
            a_row_idx: a.row_idx().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `perm[new] = old`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn perm_inv(&self) -> &[usize] {
        &self.perm_inv
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_col_ptr[self.n]
    }

    fn pattern_matches<T: Real>(&self, a: &CscMatrix<T>) -> bool {
        a.ncols() == self.n && a.col_ptr() == self.a_col_ptr.as_slice() && a.row_idx() == self.a_row_idx.as_slice()
    }
}

/// Numeric Cholesky factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor<T> {
    symbolic: Arc<SymbolicCholesky>,
    l_row_idx: Vec<usize>,
    l_values: Vec<T>,
}

impl<T: Real> CholeskyFactor<T> {
    /// Analyse and factor.
    pub fn new(a: &CscMatrix<T>) -> Result<Self> {
        let symbolic = Arc::new(SymbolicCholesky::analyse(a)?);
        Self::with_symbolic(symbolic, a)
    }

    /// Factor reusing an existing analysis; the analysis is redone when the
    /// pattern of `a` differs from the analysed one.
    pub fn with_symbolic(symbolic: Arc<SymbolicCholesky>, a: &CscMatrix<T>) -> Result<Self> {
        let symbolic = if symbolic.pattern_matches(a) {
            symbolic
        } else {
            Arc::new(SymbolicCholesky::with_ordering(a, symbolic.perm.clone()))
        };
        let n = symbolic.n;
        let c = upper_permuted(a, &symbolic.perm_inv);
        let lp = &symbolic.l_col_ptr;
        let nnz = lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![T::zero(); nnz];
        let mut next: Vec<usize> = lp[..n].to_vec();
        let mut x = vec![T::zero(); n];
        let mut stack = vec![0; n];
        let mut mark = vec![false; n];
        for k in 0..n {
            let top = ereach(&c.col_ptr, &c.row_idx, k, &symbolic.parent, &mut stack, &mut mark);
            x[k] = T::zero();
            for p in c.col_ptr[k]..c.col_ptr[k + 1] {
                let i = c.row_idx[p];
                if i <= k {
                    x[i] += c.values[p];
                }
            }
            let mut d = x[k];
            x[k] = T::zero();
            for &i in &stack[top..n] {
                let lki = x[i] / lx[lp[i]];
                x[i] = T::zero();
                for p in lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                li[p] = k;
                lx[p] = lki;
                next[i] += 1;
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: symbolic.perm[k] });
            }
            let p = next[k];
            li[p] = k;
            lx[p] = d.sqrt();
            next[k] += 1;
        }
        Ok(CholeskyFactor { symbolic, l_row_idx: li, l_values: lx })
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    /// Column `j` of `L` (permuted indices), diagonal first.
    pub fn l_col(&self, j: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let lp = &self.symbolic.l_col_ptr;
        (lp[j]..lp[j + 1]).map(move |p| (self.l_row_idx[p], self.l_values[p]))
    }

    pub fn l_diag(&self, j: usize) -> T {
        self.l_values[self.symbolic.l_col_ptr[j]]
    }

    /// `log det A = 2 Σ log L_jj`.
    pub fn log_det(&self) -> T {
        let two = T::of(2.0);
        two * (0..self.dim()).map(|j| self.l_diag(j).ln()).sum::<T>()
    }

    /// In-place `L y = b` in permuted coordinates.
    pub fn solve_l_in_place(&self, b: &mut [T]) {
        for j in 0..self.dim() {
            let mut it = self.l_col(j);
            let (_, d) = it.next().expect("diagonal");
            b[j] /= d;
            let bj = b[j];
            for (i, v) in it {
                b[i] -= v * bj;
            }
        }
    }

    /// In-place `Lᵀ x = y` in permuted coordinates.
    pub fn solve_lt_in_place(&self, y: &mut [T]) {
        for j in (0..self.dim()).rev() {
            let mut it = self.l_col(j);
            let (_, d) = it.next().expect("diagonal");
            let mut s = y[j];
            for (i, v) in it {
                s -= v * y[i];
            }
            y[j] = s / d;
        }
    }

    fn to_permuted(&self, b: &[T]) -> Vec<T> {
        self.symbolic.perm.iter().map(|&old| b[old]).collect()
    }

    fn from_permuted(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        for (new, &old) in self.symbolic.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut y = self.to_permuted(b);
        self.solve_l_in_place(&mut y);
        self.solve_lt_in_place(&mut y);
        self.from_permuted(&y)
    }

    /// `w = L⁻¹ P b`, so that `‖w‖² = bᵀ A⁻¹ b`.
    pub fn whiten(&self, b: &[T]) -> Vec<T> {
        let mut y = self.to_permuted(b);
        self.solve_l_in_place(&mut y);
        y
    }

    /// `bᵀ A⁻¹ b`.
    pub fn inv_quad_form(&self, b: &[T]) -> T {
        self.whiten(b).iter().map(|&v| v * v).sum()
    }

    /// Map iid standard normal `z` to a draw with covariance `A⁻¹`.
    pub fn colour(&self, z: &[T]) -> Vec<T> {
        let mut y = z.to_vec();
        self.solve_lt_in_place(&mut y);
        self.from_permuted(&y)
    }

    /// Column `j` of `A⁻¹`.
    pub fn inverse_column(&self, j: usize) -> Vec<T> {
        let mut e = vec![T::zero(); self.dim()];
        e[j] = T::one();
        self.solve(&e)
    }

    /// Entries of `A⁻¹` on the pattern of `L` by the Takahashi recursion.
    pub fn selected_inverse(&self) -> SelectedInverse<T> {
        let n = self.dim();
        let lp = &self.symbolic.l_col_ptr;
        let li = &self.l_row_idx;
        let lx = &self.l_values;
        let mut sx = vec![T::zero(); lx.len()];
        let lookup = |sx: &[T], r: usize, c: usize| -> T {
            // r ≥ c in permuted order; rows within a column are ascending.
            let rows = &li[lp[c]..lp[c + 1]];
            match rows.binary_search(&r) {
                Ok(k) => sx[lp[c] + k],
                Err(_) => unreachable!("fill pattern is closed under the recursion"),
            }
        };
        for i in (0..n).rev() {
            let d = lx[lp[i]];
            let inv_d = T::one() / d;
            let start = lp[i] + 1;
            let end = lp[i + 1];
            for q in start..end {
                let j = li[q];
                let mut s = T::zero();
                for p in start..end {
                    let k = li[p];
                    let (r, c) = if k >= j { (k, j) } else { (j, k) };
                    s += lx[p] * lookup(&sx, r, c);
                }
                sx[q] = -s * inv_d;
            }
            let mut s = T::zero();
            for p in start..end {
                s += lx[p] * sx[p];
            }
            sx[lp[i]] = inv_d * inv_d - inv_d * s;
        }
        SelectedInverse {
            symbolic: Arc::clone(&self.symbolic),
            row_idx: li.clone(),
            values: sx,
            extra: HashMap::new(),
        }
    }

    /// Selected inverse plus arbitrary extra `(i, j)` entries (original
    /// indices) obtained from inverse columns when outside the fill pattern.
    pub fn selected_inverse_with(&self, extra: &[(usize, usize)]) -> SelectedInverse<T> {
        let mut sel = self.selected_inverse();
        let mut columns: HashMap<usize, Vec<T>> = HashMap::new();
        for &(i, j) in extra {
            if sel.get(i, j).is_some() {
                continue;
            }
            let col = columns.entry(j).or_insert_with(|| self.inverse_column(j));
            let v = col[i];
            sel.extra.insert((i.min(j), i.max(j)), v);
        }
        sel
    }
}

/// Entries of `A⁻¹` on (at least) the fill pattern of the Cholesky factor.
#[derive(Debug, Clone)]
pub struct SelectedInverse<T> {
    symbolic: Arc<SymbolicCholesky>,
    row_idx: Vec<usize>,
    values: Vec<T>,
    extra: HashMap<(usize, usize), T>,
}

impl<T: Real> SelectedInverse<T> {
    /// Entry `(i, j)` of the inverse in original indices, if computed.
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        let pi = self.symbolic.perm_inv[i];
        let pj = self.symbolic.perm_inv[j];
        let (r, c) = if pi >= pj { (pi, pj) } else { (pj, pi) };
        let lp = &self.symbolic.l_col_ptr;
        let rows = &self.row_idx[lp[c]..lp[c + 1]];
        if let Ok(k) = rows.binary_search(&r) {
            return Some(self.values[lp[c] + k]);
        }
        self.extra.get(&(i.min(j), i.max(j))).copied()
    }

    /// Diagonal of the inverse (marginal variances), original order.
    pub fn diagonal(&self) -> Vec<T> {
        let n = self.symbolic.n;
        let lp = &self.symbolic.l_col_ptr;
        let mut d = vec![T::zero(); n];
        for (new, &old) in self.symbolic.perm.iter().enumerate() {
            d[old] = self.values[lp[new]];
        }
        d
    }

    /// Number of stored entries (lower triangle of the pattern plus extras).
    pub fn len(&self) -> usize {
        self.values.len() + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar1_precision(n: usize, rho: f64) -> CscMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            let d = if i == 0 || i == n - 1 { 1.0 } else { 1.0 + rho * rho };
            t.push((i, i, d));
            if i + 1 < n {
                t.push((i, i + 1, -rho));
                t.push((i + 1, i, -rho));
            }
        }
        CscMatrix::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn factor_reconstructs_and_solves() {
        let a = ar1_precision(8, 0.6).add(&CscMatrix::from_triplets(8, 8, &[(0, 7, 0.2), (7, 0, 0.2)]).unwrap()).unwrap();
        let f = CholeskyFactor::new(&a).unwrap();
        let b: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b);
        let r = a.mul_vec(&x).unwrap();
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
        let dense = a.to_dense_f64();
        let ld = dense.clone().cholesky().unwrap();
        let want: f64 = 2.0 * ld.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        assert!((f.log_det() - want).abs() < 1e-12);
    }

    #[test]
    fn indefinite_rejected() {
        let a = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0), (0, 1, 2.0), (1, 0, 2.0)]).unwrap();
        assert!(matches!(CholeskyFactor::new(&a), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn identity_and_two_by_two_inverse() {
        let f = CholeskyFactor::new(&CscMatrix::<f64>::identity(4)).unwrap();
        assert!(f.selected_inverse().diagonal().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let a = CscMatrix::<f64>::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 2.0), (0, 1, -1.0), (1, 0, -1.0)]).unwrap();
        let s = CholeskyFactor::new(&a).unwrap().selected_inverse();
        let d = s.diagonal();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-15 && (d[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.get(0, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ar1_selected_inverse_matches_dense() {
        let a = ar1_precision(50, 0.9);
        let s = CholeskyFactor::new(&a).unwrap().selected_inverse();
        let inv = a.to_dense_f64().try_inverse().unwrap();
        for i in 0..50 {
            assert!((s.get(i, i).unwrap() - inv[(i, i)]).abs() < 1e-10);
            if i + 1 < 50 {
                assert!((s.get(i + 1, i).unwrap() - inv[(i + 1, i)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn extra_entries_from_columns() {
        let a = ar1_precision(10, 0.5);
        let f = CholeskyFactor::new(&a).unwrap();
        let s = f.selected_inverse_with(&[(0, 9), (3, 7)]);
        let inv = a.to_dense_f64().try_inverse().unwrap();
        assert!((s.get(9, 0).unwrap() - inv[(9, 0)]).abs() < 1e-12);
        assert!((s.get(3, 7).unwrap() - inv[(3, 7)]).abs() < 1e-12);
    }

    #[test]
    fn symbolic_reuse_and_pattern_change() {
        let a = ar1_precision(6, 0.3);
        let f = CholeskyFactor::new(&a).unwrap();
        let b = a.add_diagonal(&[0.5; 6]);
        let g = CholeskyFactor::with_symbolic(Arc::clone(f.symbolic()), &b).unwrap();
        assert!(Arc::ptr_eq(f.symbolic(), g.symbolic()));
        let c = a.add(&CscMatrix::from_triplets(6, 6, &[(0, 5, 0.1), (5, 0, 0.1)]).unwrap()).unwrap();
        let h = CholeskyFactor::with_symbolic(Arc::clone(f.symbolic()), &c).unwrap();
        let x = h.solve(&[1.0; 6]);
        let r = c.mul_vec(&x).unwrap();
        assert!(r.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn generic_over_f32() {
        let a = CscMatrix::<f32>::from_triplets(2, 2, &[(0, 0, 4.0), (1, 1, 9.0)]).unwrap();
        let f = CholeskyFactor::new(&a).unwrap();
        assert!((f.log_det() - 36f32.ln()).abs() < 1e-5);
    }
}
