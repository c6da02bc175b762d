//! Sparse direct solver: left-looking column LU with partial pivoting,
//! preceded by a reverse Cuthill-McKee column ordering.
//!
//! The factorization is deterministic: orderings and pivot ties follow
//! fixed rules, so repeated solves of identical systems are bit-identical.

use crate::error::{Error, Result};
use crate::scalar::{cast, Real};
use crate::sparse::SparseMatrix;

const PIVOT_DIAG_PREFERENCE: f64 = 0.1;

/// LU decomposition of a square sparse matrix, reusable for many
/// right-hand sides.
#[derive(Debug)]
pub struct LuFactors<T> {
    n: usize,
    /// Column ordering: factored column k corresponds to original column q[k].
    q: Vec<usize>,
    /// Row permutation from pivoting: original row i became pivot pinv[i].
    pinv: Vec<usize>,
    l_colptr: Vec<usize>,
    l_rows: Vec<usize>,
    l_vals: Vec<T>,
    u_colptr: Vec<usize>,
    u_rows: Vec<usize>,
    u_vals: Vec<T>,
}

/// Compressed-column copy of a matrix (the factorization walks columns).
struct Csc<T> {
    colptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<T>,
}

fn to_csc<T: Real>(a: &SparseMatrix<T>) -> Csc<T> {
    let n_rows = a.n_rows();
    let n_cols = a.n_cols();
    let mut counts = vec![0usize; n_cols + 1];
    for r in 0..n_rows {
        for &c in a.row(r).0 {
            counts[c + 1] += 1;
        }
    }
    for c in 0..n_cols {
        counts[c + 1] += counts[c];
    }
    let colptr = counts.clone();
    let nnz = colptr[n_cols];
    let mut rows = vec![0usize; nnz];
    let mut vals = vec![T::zero(); nnz];
    let mut next = colptr.clone();
    for r in 0..n_rows {
        let (cols, vs) = a.row(r);
        for (&c, &v) in cols.iter().zip(vs) {
            let k = next[c];
            rows[k] = r;
            vals[k] = v;
            next[c] += 1;
        }
    }
    Csc { colptr, rows, vals }
}

/// Reverse Cuthill-McKee ordering of the symmetrized adjacency graph.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_order<T: Real>(a: &SparseMatrix<T>) -> Vec<usize> {
    let n = a.n_rows();
    // Symmetrized adjacency, self-loops dropped.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in 0..n {
        for &c in a.row(r).0 {
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    loop {
        // Root each component at its lowest-degree unvisited vertex.
        let mut root = None;
        for v in 0..n {
            if !visited[v] && root.is_none_or(|r: usize| degree[v] < degree[r]) {
                root = Some(v);
            }
        }
        let Some(root) = root else { break };
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_unstable_by_key(|&u| (degree[u], u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Depth-first reach of column `col` of A through the partially built L,
/// returning the stack top; `stack[top..]` holds the reach in topological
/// order (original row indices).
#[allow(clippy::too_many_arguments)]
fn reach(
    l_colptr: &[usize],
    l_rows: &[usize],
    a: &Csc<impl Real>,
    col: usize,
    pinv: &[usize],
    visited: &mut [bool],
    stack: &mut [usize],
    work: &mut [usize],
) -> usize {
    let n = visited.len();
    let mut top = n;
    for &start in &a.rows[a.colptr[col]..a.colptr[col + 1]] {
        if visited[start] {
            continue;
        }
        // Iterative DFS; work[depth] stores the resume position within
        // the child list of the node at that depth.
        let mut depth = 0usize;
        stack[depth] = start;
        work[depth] = 0;
        visited[start] = true;
        loop {
            let node = stack[depth];
            let j = pinv[node];
            let children: &[usize] = if j == usize::MAX {
                &[]
            } else {
                &l_rows[l_colptr[j]..l_colptr[j + 1]]
            };
            let mut descended = false;
            while work[depth] < children.len() {
                let child = children[work[depth]];
                work[depth] += 1;
                if !visited[child] {
                    visited[child] = true;
                    depth += 1;
                    stack[depth] = child;
                    work[depth] = 0;
                    descended = true;
                    break;
                }
            }
            if descended {
                continue;
            }
            // Post-order: emit into the topological region.
            top -= 1;
            work[top] = node;
            if depth == 0 {
                break;
            }
            depth -= 1;
        }
        // Move emitted nodes out of the DFS scratch area.
    }
    // work[top..n] holds the topological order; copy into stack tail.
    stack[top..n].copy_from_slice(&work[top..n]);
    top
}

impl<T: Real> LuFactors<T> {
    /// Factorize a square sparse matrix.
    pub fn factorize(a: &SparseMatrix<T>) -> Result<Self> {
        let n = a.n_rows();
        if n != a.n_cols() {
            return Err(Error::DimensionMismatch(format!(
                "LU needs a square matrix, got {}x{}",
                a.n_rows(),
                a.n_cols()
            )));
        }
        let q = rcm_order(a);
        let acsc = to_csc(a);

        let mut pinv = vec![usize::MAX; n];
        let mut l_colptr = Vec::with_capacity(n + 1);
        let mut u_colptr = Vec::with_capacity(n + 1);
        l_colptr.push(0);
        u_colptr.push(0);
        let mut l_rows: Vec<usize> = Vec::new();
        let mut l_vals: Vec<T> = Vec::new();
        let mut u_rows: Vec<usize> = Vec::new();
        let mut u_vals: Vec<T> = Vec::new();

        let mut x = vec![T::zero(); n];
        let mut visited = vec![false; n];
        let mut stack = vec![0usize; n];
        let mut work = vec![0usize; n];
        let diag_pref: T = cast(PIVOT_DIAG_PREFERENCE);

        for k in 0..n {
            let col = q[k];
            let top = reach(
                &l_colptr,
                &l_rows,
                &acsc,
                col,
                &pinv,
                &mut visited,
                &mut stack,
                &mut work,
            );
            // Numeric sparse triangular solve x = L \ A(:, col).
            for &i in &stack[top..n] {
                x[i] = T::zero();
            }
            for (idx, &i) in acsc.rows[acsc.colptr[col]..acsc.colptr[col + 1]]
                .iter()
                .enumerate()
            {
                x[i] = acsc.vals[acsc.colptr[col] + idx];
            }
            for p in top..n {
                let i = stack[p];
                let j = pinv[i];
                if j == usize::MAX {
                    continue;
                }
                let xi = x[i];
                if xi != T::zero() {
                    for (r, &li) in l_rows[l_colptr[j]..l_colptr[j + 1]].iter().enumerate() {
                        x[li] = x[li] - l_vals[l_colptr[j] + r] * xi;
                    }
                }
            }

            // Pivot selection: largest magnitude among not-yet-pivotal rows,
            // with preference for the natural diagonal when competitive.
            let mut ipiv = usize::MAX;
            let mut amax = T::neg_infinity();
            for &i in &stack[top..n] {
                if pinv[i] == usize::MAX {
                    let t = x[i].abs();
                    if t > amax {
                        amax = t;
                        ipiv = i;
                    }
                }
            }
            if ipiv == usize::MAX {
                for &i in &stack[top..n] {
                    visited[i] = false;
                }
                return Err(Error::StructurallySingular { column: col });
            }
            if amax <= T::zero() || !amax.is_finite() {
                return Err(Error::NumericallySingular {
                    column: col,
                    pivot: amax.to_f64().unwrap_or(f64::NAN),
                });
            }
            if pinv[col] == usize::MAX && x[col].abs() >= diag_pref * amax {
                ipiv = col;
            }

            let pivot = x[ipiv];
            pinv[ipiv] = k;
            // U column k: rows already pivotal, diagonal entry last.
            for &i in &stack[top..n] {
                if pinv[i] != usize::MAX && i != ipiv {
                    u_rows.push(pinv[i]);
                    u_vals.push(x[i]);
                }
            }
            u_rows.push(k);
            u_vals.push(pivot);
            // L column k: unit diagonal implicit; below-pivot rows scaled.
            for &i in &stack[top..n] {
                visited[i] = false;
                if pinv[i] == usize::MAX {
                    l_rows.push(i);
                    l_vals.push(x[i] / pivot);
                }
                x[i] = T::zero();
            }
            l_colptr.push(l_rows.len());
            u_colptr.push(u_rows.len());
        }

        // Map L's row indices into pivot numbering.
        for r in &mut l_rows {
            *r = pinv[*r];
        }

        Ok(Self {
            n,
            q,
            pinv,
            l_colptr,
            l_rows,
            l_vals,
            u_colptr,
            u_rows,
            u_vals,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solve A x = b using the stored factors.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.n, "rhs length mismatch");
        let mut z = vec![T::zero(); self.n];
        for (i, &bi) in b.iter().enumerate() {
            z[self.pinv[i]] = bi;
        }
        // Forward: L z = P b (L unit lower, diagonal implicit).
        for k in 0..self.n {
            let zk = z[k];
            if zk != T::zero() {
                for p in self.l_colptr[k]..self.l_colptr[k + 1] {
                    z[self.l_rows[p]] = z[self.l_rows[p]] - self.l_vals[p] * zk;
                }
            }
        }
        // Backward: U y = z (diagonal stored last in each column).
        for k in (0..self.n).rev() {
            let hi = self.u_colptr[k + 1];
            let diag = self.u_vals[hi - 1];
            let yk = z[k] / diag;
            z[k] = yk;
            if yk != T::zero() {
                for p in self.u_colptr[k]..hi - 1 {
                    z[self.u_rows[p]] = z[self.u_rows[p]] - self.u_vals[p] * yk;
                }
            }
        }
        let mut out = vec![T::zero(); self.n];
        for k in 0..self.n {
            out[self.q[k]] = z[k];
        }
        out
    }
}

fn maxnorm<T: Real>(v: &[T]) -> T {
    v.iter()
        .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
}

/// Relative residual tolerance for the solve contract; scales with the
/// working precision so the f64 contract of 1e-10 does not trip f32 runs.
fn contract_tolerance<T: Real>() -> T {
    let base: T = cast(1e-10);
    let eps_scaled = T::epsilon() * cast(100.0);
    if eps_scaled > base {
        eps_scaled
    } else {
        base
    }
}

/// Direct solve of A x = b with a verified relative residual.
///
/// One round of iterative refinement is applied if the first pass misses
/// the contract; a persistent miss is an error rather than a silent
/// low-quality answer.
pub fn linear_solve<T: Real>(a: &SparseMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    let factors = LuFactors::factorize(a)?;
    linear_solve_with(&factors, a, b)
}

/// Same contract as [`linear_solve`], reusing an existing factorization.
pub fn linear_solve_with<T: Real>(
    factors: &LuFactors<T>,
    a: &SparseMatrix<T>,
    b: &[T],
) -> Result<Vec<T>> {
    if b.len() != a.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs length {} does not match matrix dimension {}",
            b.len(),
            a.n_rows()
        )));
    }
    let mut x = factors.solve(b);
    let bnorm = maxnorm(b);
    if bnorm == T::zero() {
        return Ok(x);
    }
    let tol = contract_tolerance::<T>();
    for _ in 0..2 {
        let ax = a.mul_vec(&x);
        let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &axi)| bi - axi).collect();
        if maxnorm(&r) / bnorm <= tol {
            return Ok(x);
        }
        let dx = factors.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi = *xi + *di;
        }
    }
    let ax = a.mul_vec(&x);
    let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &axi)| bi - axi).collect();
    let rel = maxnorm(&r) / bnorm;
    if rel <= tol {
        Ok(x)
    } else {
        Err(Error::SolveResidual {
            residual: rel.to_f64().unwrap_or(f64::NAN),
            tolerance: tol.to_f64().unwrap_or(f64::NAN),
        })
    }
}
