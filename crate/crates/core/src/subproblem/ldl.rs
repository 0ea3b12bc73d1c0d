//! Envelope (skyline) `LDLᵀ` for symmetric quasi-definite matrices, with a
//! reverse Cuthill–McKee ordering to keep the envelope narrow.
//!
//! Quasi-definite matrices admit an `LDLᵀ` factorization under any
//! symmetric permutation, so no pivoting is done. Pivots whose sign
//! disagrees with the expected inertia are replaced by a small value of the
//! right sign (dynamic regularization); iterative refinement outside this
//! module removes the perturbation.

use std::collections::VecDeque;

/// Reverse Cuthill–McKee ordering of a symmetric sparsity pattern.
///
/// `edges` lists off-diagonal pairs (either orientation). Returns `perm`
/// with `perm[new] = old`. Ties are broken by index so the ordering is
/// deterministic.
pub fn reverse_cuthill_mckee(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    let mut queue = VecDeque::new();
    for &root in &by_degree {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Lower envelope storage: row `i` holds columns `first[i]..=i`.
#[derive(Debug, Clone)]
pub struct Skyline {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
    work: Vec<f64>,
}

impl Skyline {
    /// Envelope of the pattern given by `entries` (indices already permuted;
    /// either triangle). The diagonal is always included.
    pub fn new(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in entries {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            first[r] = first[r].min(c);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);
        Skyline {
            n,
            first,
            start,
            vals: vec![0.0; total],
            diag: vec![0.0; n],
            work: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries; the factorization costs roughly `Σ (row width)²`.
    pub fn envelope_size(&self) -> usize {
        self.vals.len()
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `v` at `(i, j)`; `(j, i)` is implied by symmetry.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(c >= self.first[r], "entry ({r}, {c}) outside the envelope");
        self.vals[self.start[r] + c - self.first[r]] += v;
    }

    /// In-place `LDLᵀ`. `signs[i]` is the expected sign of pivot `i`; pivots
    /// with `signs[i]·d < eps` are replaced by `signs[i]·delta`. Returns the
    /// number of replaced pivots.
    pub fn factor(&mut self, signs: &[f64], eps: f64, delta: f64) -> usize {
        let mut bumped = 0;
        for i in 0..self.n {
            let fi = self.first[i];
            let si = self.start[i];
            // work[k] holds L_ik·D_k for k in fi..i
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let lo = fi.max(fj);
                let mut acc = self.vals[si + j - fi];
                let row_i = &self.work[lo..j];
                let row_j = &self.vals[sj + lo - fj..sj + j - fj];
                for (t, l) in row_i.iter().zip(row_j) {
                    acc -= t * l;
                }
                self.work[j] = acc;
            }
            let mut d = self.vals[si + i - fi];
            for j in fi..i {
                let l = self.work[j] / self.diag[j];
                d -= self.work[j] * l;
                self.vals[si + j - fi] = l;
            }
            if signs[i] * d < eps {
                d = signs[i] * delta;
                bumped += 1;
            }
            self.diag[i] = d;
            self.vals[si + i - fi] = 1.0;
        }
        bumped
    }

    /// Solves with the factors from [`Skyline::factor`], overwriting `b`.
    pub fn solve(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let si = self.start[i];
            let row = &self.vals[si..si + i - fi];
            let mut acc = b[i];
            for (l, x) in row.iter().zip(&b[fi..i]) {
                acc -= l * x;
            }
            b[i] = acc;
        }
        for i in 0..self.n {
            b[i] /= self.diag[i];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let xi = b[i];
            let row = &self.vals[si..si + i - fi];
            for (l, x) in row.iter().zip(&mut b[fi..i]) {
                *x -= l * xi;
            }
        }
    }
}
