//! Sparse symmetric storage and an envelope (skyline) Cholesky factorization
//! with reverse Cuthill-McKee reordering.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Symmetric matrix in compressed row form. Both triangles are stored.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut col = vec![0usize; triplets.len()];
        let mut val = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            col[fill[i]] = j;
            val[fill[i]] = v;
            fill[i] += 1;
        }
        // sort each row and merge duplicates
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut out_col = Vec::with_capacity(col.len());
        let mut out_val = Vec::with_capacity(col.len());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|k| (col[k], val[k])));
            scratch.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for &(j, v) in &scratch {
                if j == last {
                    *out_val.last_mut().unwrap() += v;
                } else {
                    out_col.push(j);
                    out_val.push(v);
                    last = j;
                }
            }
            row_ptr.push(out_col.len());
        }
        CsrMatrix { n, row_ptr, col: out_col, val: out_val }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    /// Iterates the stored entries of row `i` as (column, value).
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col[r.clone()].binary_search(&j) {
            Ok(k) => self.val[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }
}

/// Reverse Cuthill-McKee ordering. Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, mask: &[bool]| -> (usize, usize) {
        // returns (farthest node with min degree in last level, eccentricity)
        let mut dist = vec![usize::MAX; n];
        let mut q = VecDeque::new();
        dist[start] = 0;
        q.push_back(start);
        let mut last = start;
        while let Some(v) = q.pop_front() {
            for &w in &adj[v] {
                if !mask[w] && dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    q.push_back(w);
                    if dist[w] > dist[last] || (dist[w] == dist[last] && degree[w] < degree[last]) {
                        last = w;
                    }
                }
            }
        }
        (last, dist[last])
    };

    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .unwrap();
        // pseudo-peripheral start node
        let mut start = seed;
        let mut ecc = 0;
        for _ in 0..4 {
            let (far, e) = bfs_levels(start, &visited);
            if e <= ecc {
                break;
            }
            ecc = e;
            start = far;
        }
        let first = order.len();
        visited[start] = true;
        order.push(start);
        let mut head = first;
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (degree[w], w));
            for w in nb {
                visited[w] = true;
                order.push(w);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope Cholesky factor `P A Pᵀ = L Lᵀ`, row-oriented skyline storage.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    perm: Vec<usize>,
    inv: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    /// Factorizes `a` using RCM reordering.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let perm = rcm_ordering(a);
        Self::factor_with_ordering(a, perm)
    }

    /// Factorizes with a caller-provided ordering (`perm[new] = old`).
    pub fn factor_with_ordering(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.dim();
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = inv[old];
            for (j_old, _) in a.row(old) {
                let j = inv[j_old];
                if j < first[i] {
                    first[i] = j;
                }
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i] + 1));
        }
        let mut data = vec![0.0; start[n]];
        for old in 0..n {
            let i = inv[old];
            for (j_old, v) in a.row(old) {
                let j = inv[j_old];
                if j <= i {
                    data[start[i] + (j - first[i])] += v;
                }
            }
        }
        let mut f = SkylineCholesky { perm, inv, first, start, data };
        f.factor_in_place()?;
        Ok(f)
    }

    fn factor_in_place(&mut self) -> Result<()> {
        let n = self.perm.len();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut s = self.data[si + (j - fi)];
                let ri = &self.data[si + (k0 - fi)..si + (j - fi)];
                let rj = &self.data[sj + (k0 - fj)..sj + (j - fj)];
                s -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                let djj = self.data[sj + (j - fj)];
                self.data[si + (j - fi)] = s / djj;
            }
            let row = &self.data[si..si + (i - fi)];
            let d = self.data[si + (i - fi)] - row.iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular(format!(
                    "non-positive pivot {d:e} at row {i} of {n}"
                )));
            }
            self.data[si + (i - fi)] = d.sqrt();
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Stored envelope size.
    pub fn envelope(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        // forward: L y = b
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let row = &self.data[si..si + (i - fi)];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / self.data[si + (i - fi)];
        }
        // backward: Lᵀ x = y (column sweep)
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            y[i] /= self.data[si + (i - fi)];
            let xi = y[i];
            for j in fi..i {
                y[j] -= self.data[si + (j - fi)] * xi;
            }
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }

    /// Position of original index `i` in the factor ordering.
    pub fn permuted_index(&self, i: usize) -> usize {
        self.inv[i]
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
