//! Compressed-row sparse matrices.
//!
//! All finite-element operators on one mesh share a single
//! [`SparsityPattern`] (the vertex adjacency graph), so matrices with the
//! same pattern can be combined entry-wise without searching.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-compressed sparsity structure. Column indices are sorted within
/// each row and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Build a pattern from (row, col) pairs; duplicates collapse.
    pub fn from_pairs(n_rows: usize, n_cols: usize, pairs: &[(usize, usize)]) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n_rows];
        for &(r, c) in pairs {
            assert!(r < n_rows && c < n_cols, "pattern entry out of range");
            rows[r].push(c);
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices of row `r`.
    pub fn row_cols(&self, r: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    /// Position of entry (r, c) in the value array, if present.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let lo = self.row_ptr[r];
        let cols = self.row_cols(r);
        cols.binary_search(&c).ok().map(|k| lo + k)
    }
}

/// Square (or rectangular) sparse matrix in CSR form.
#[derive(Debug, Clone)]
pub struct SparseMatrix<T> {
    pattern: Arc<SparsityPattern>,
    values: Vec<T>,
}

impl<T: Real> SparseMatrix<T> {
    /// All-zero matrix over a given pattern.
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let nnz = pattern.nnz();
        Self {
            pattern,
            values: vec![T::zero(); nnz],
        }
    }

    /// Build from triplets, summing duplicates. Pattern is derived from
    /// the triplets themselves.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let pairs: Vec<(usize, usize)> = triplets.iter().map(|&(r, c, _)| (r, c)).collect();
        let pattern = Arc::new(SparsityPattern::from_pairs(n_rows, n_cols, &pairs));
        let mut m = Self::zeros(pattern);
        for &(r, c, v) in triplets {
            let k = m.pattern.find(r, c).expect("triplet in derived pattern");
            m.values[k] = m.values[k] + v;
        }
        m
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.pattern.n_cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Entry (r, c); zero if outside the pattern.
    pub fn get(&self, r: usize, c: usize) -> T {
        self.pattern
            .find(r, c)
            .map_or_else(T::zero, |k| self.values[k])
    }

    /// Add `v` into entry (r, c), which must exist in the pattern.
    pub fn add_at(&mut self, r: usize, c: usize, v: T) {
        let k = self
            .pattern
            .find(r, c)
            .expect("entry must be inside the sparsity pattern");
        self.values[k] = self.values[k] + v;
    }

    /// Row `r` as parallel (columns, values) slices.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let lo = self.pattern.row_ptr[r];
        let hi = self.pattern.row_ptr[r + 1];
        (&self.pattern.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n_cols(), "matvec dimension mismatch");
        let mut y = vec![T::zero(); self.n_rows()];
        for r in 0..self.n_rows() {
            let (cols, vals) = self.row(r);
            let mut acc = T::zero();
            for (&c, &v) in cols.iter().zip(vals) {
                acc = acc + v * x[c];
            }
            y[r] = acc;
        }
        y
    }

    /// xᵀ A x.
    pub fn quadratic_form(&self, x: &[T]) -> T {
        let ax = self.mul_vec(x);
        x.iter().zip(&ax).map(|(&a, &b)| a * b).sum()
    }

    /// Entry-wise `self + alpha * other`; both operands must share one pattern.
    pub fn add_scaled(&self, alpha: T, other: &SparseMatrix<T>) -> SparseMatrix<T> {
        assert!(
            Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern,
            "add_scaled requires identical sparsity patterns"
        );
        let mut out = self.clone();
        for (o, &v) in out.values.iter_mut().zip(&other.values) {
            *o = *o + alpha * v;
        }
        out
    }

    pub fn scale(&mut self, alpha: T) {
        for v in &mut self.values {
            *v = *v * alpha;
        }
    }

    /// Per-row sums (for P1 mass matrices these are the nodal volumes).
    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n_rows())
            .map(|r| self.row(r).1.iter().copied().sum())
            .collect()
    }

    /// Diagonal lumping: each row collapses onto its diagonal entry.
    pub fn lumped(&self) -> SparseMatrix<T> {
        assert_eq!(
            self.n_rows(),
            self.n_cols(),
            "lumping needs a square matrix"
        );
        let sums = self.row_sums();
        let mut out = SparseMatrix::zeros(self.pattern.clone());
        for (r, s) in sums.into_iter().enumerate() {
            let k = out.pattern.find(r, r).expect("diagonal entry in pattern");
            out.values[k] = s;
        }
        out
    }

    /// Maximum |a_ij - a_ji| over the pattern.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for r in 0..self.n_rows() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let d = (v - self.get(c, r)).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    /// Dense copy, for small oracles and debugging only.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.n_cols()]; self.n_rows()];
        for r in 0..self.n_rows() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                d[r][c] = v;
            }
        }
        d
    }
}

/// Check that a matrix is symmetric to within `tol` in max norm.
pub fn check_symmetric<T: Real>(m: &SparseMatrix<T>, tol: T, what: &str) -> Result<()> {
    let a = m.asymmetry();
    if a > tol {
        return Err(Error::InvalidMesh(format!(
            "{what} asymmetric by {a:e} (tolerance {tol:e})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> SparseMatrix<f64> {
        // [2 -1 0; -1 2 -1; 0 -1 2]
        SparseMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 2.0),
            ],
        )
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.5), (1, 1, 1.0)]);
        assert_eq!(m.get(0, 0), 3.5);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn matvec_tridiagonal() {
        let m = small();
        let y = m.mul_vec(&[1.0, 1.0, 1.0]);
        assert_eq!(y, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn lumping_collects_row_sums() {
        let m = small();
        let l = m.lumped();
        assert_eq!(l.get(0, 0), 1.0);
        assert_eq!(l.get(1, 1), 0.0);
        assert_eq!(l.get(0, 1), 0.0);
    }

    #[test]
    fn symmetry_detects_asymmetric_entry() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0f64), (1, 0, 2.0)]);
        assert!(check_symmetric(&m, 1e-12, "test").is_err());
        assert!((m.asymmetry() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn matvec_matches_dense(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..8usize);
            let mut trips = Vec::new();
            for r in 0..n {
                for c in 0..n {
                    if rng.gen_bool(0.4) {
                        trips.push((r, c, rng.gen_range(-2.0..2.0)));
                    }
                }
                trips.push((r, r, rng.gen_range(-2.0..2.0)));
            }
            let m = SparseMatrix::from_triplets(n, n, &trips);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = m.mul_vec(&x);
            let d = m.to_dense();
            for r in 0..n {
                let want: f64 = (0..n).map(|c| d[r][c] * x[c]).sum();
                prop_assert!((y[r] - want).abs() < 1e-12);
            }
        }
    }
}
