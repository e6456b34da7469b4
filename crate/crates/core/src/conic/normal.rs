//! Factorization of the regularized normal matrix `σI + Aᵀ diag(ρ) A`.
//!
//! Sparse rows go into an envelope (skyline) Cholesky factor under a reverse
//! Cuthill-McKee ordering; high-degree columns are ordered last so their
//! fill stays confined to the final rows. Dense rows of `A` are kept out of
//! the factor and applied through the Woodbury identity.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::sparse::CsrMatrix;

/// Rows with more entries than this are handled as dense low-rank updates.
fn dense_row_threshold(ncols: usize) -> usize {
    48.max((ncols as f64).sqrt() as usize)
}

pub(crate) struct NormalSolver {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    factor: Vec<f64>,
    // dense part: rows of sqrt(ρ)·a for dense rows, their solves, and the capacitance factor
    dense: Vec<DVector<f64>>,
    woodbury: Vec<DVector<f64>>,
    capacitance: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    scratch: std::cell::RefCell<Vec<f64>>,
}

impl NormalSolver {
    pub fn new(a: &CsrMatrix, rho: &[f64], sigma: f64) -> Self {
        let n = a.ncols();
        let dense_cut = dense_row_threshold(n);
        let is_dense: Vec<bool> = (0..a.nrows()).map(|r| a.row_nnz(r) > dense_cut).collect();

        // structure of the sparse part
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for r in 0..a.nrows() {
            if is_dense[r] {
                continue;
            }
            let cols = a.row(r).0;
            for (p, &ci) in cols.iter().enumerate() {
                for &cj in &cols[..p] {
                    adj[ci].push(cj);
                    adj[cj].push(ci);
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let perm = ordering(&adj);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = inv[old];
            for &nb in &adj[old] {
                let j = inv[nb];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + i - first[i] + 1);
        }

        let mut solver = Self {
            n,
            perm,
            first,
            offset,
            factor: Vec::new(),
            dense: Vec::new(),
            woodbury: Vec::new(),
            capacitance: None,
            scratch: std::cell::RefCell::new(vec![0.0; n]),
        };
        let mut shift = sigma;
        loop {
            if solver.factorize(a, rho, shift, &is_dense, &inv) {
                break;
            }
            shift *= 10.0;
            log::debug!("normal matrix not positive definite, raising regularization to {shift:e}");
        }
        solver
    }

    fn factorize(
        &mut self,
        a: &CsrMatrix,
        rho: &[f64],
        sigma: f64,
        is_dense: &[bool],
        inv: &[usize],
    ) -> bool {
        let n = self.n;
        let mut l = vec![0.0; self.offset[n]];
        for i in 0..n {
            l[self.offset[i] + i - self.first[i]] = sigma;
        }
        self.dense.clear();
        for r in 0..a.nrows() {
            let (cols, vals) = a.row(r);
            if is_dense[r] {
                let mut v = DVector::zeros(n);
                let s = rho[r].sqrt();
                for (&c, &val) in cols.iter().zip(vals) {
                    v[inv[c]] = s * val;
                }
                self.dense.push(v);
                continue;
            }
            for (p, (&ci, &vi)) in cols.iter().zip(vals).enumerate() {
                let gi = inv[ci];
                for (&cj, &vj) in cols[..=p].iter().zip(&vals[..=p]) {
                    let gj = inv[cj];
                    let (hi, lo) = if gi >= gj { (gi, gj) } else { (gj, gi) };
                    l[self.offset[hi] + lo - self.first[hi]] += rho[r] * vi * vj;
                }
            }
        }
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let k0 = fi.max(fj);
                let mut sum = l[oi + j - fi];
                let li = &l[oi + k0 - fi..oi + j - fi];
                let lj = &l[oj + k0 - fj..oj + j - fj];
                sum -= dot(li, lj);
                l[oi + j - fi] = sum / l[oj + j - fj];
            }
            let row = &l[oi..oi + i - fi];
            let d = l[oi + i - fi] - dot(row, row);
            if !(d > 0.0) || !d.is_finite() {
                return false;
            }
            l[oi + i - fi] = d.sqrt();
        }
        self.factor = l;

        self.woodbury = self
            .dense
            .iter()
            .map(|v| self.solve_sparse_permuted(v.as_slice()))
            .collect();
        self.capacitance = if self.dense.is_empty() {
            None
        } else {
            let p = self.dense.len();
            let mut cap = DMatrix::identity(p, p);
            for (r, d) in self.dense.iter().enumerate() {
                for (c, w) in self.woodbury.iter().enumerate() {
                    cap[(r, c)] += d.dot(w);
                }
            }
            match cap.cholesky() {
                Some(c) => Some(c),
                None => return false,
            }
        };
        true
    }

    /// Solves with the sparse factor only, in permuted coordinates.
    fn solve_sparse_permuted(&self, rhs: &[f64]) -> DVector<f64> {
        let mut z = rhs.to_vec();
        self.lsolve_in_place(&mut z);
        DVector::from_vec(z)
    }

    fn lsolve_in_place(&self, z: &mut [f64]) {
        let l = &self.factor;
        for i in 0..self.n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let s = dot(&l[oi..oi + i - fi], &z[fi..i]);
            z[i] = (z[i] - s) / l[oi + i - fi];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            z[i] /= l[oi + i - fi];
            let zi = z[i];
            for (zk, lk) in z[fi..i].iter_mut().zip(&l[oi..oi + i - fi]) {
                *zk -= lk * zi;
            }
        }
    }

    /// Solves the full system in place (original variable order).
    pub fn solve(&self, rhs: &mut [f64]) {
        let mut z = self.scratch.borrow_mut();
        for (new, &old) in self.perm.iter().enumerate() {
            z[new] = rhs[old];
        }
        self.lsolve_in_place(&mut z);
        if let Some(cap) = &self.capacitance {
            let u = DVector::from_iterator(
                self.dense.len(),
                self.dense.iter().map(|d| dot(d.as_slice(), &z)),
            );
            let v = cap.solve(&u);
            for (w, vk) in self.woodbury.iter().zip(v.iter()) {
                for (zi, wi) in z.iter_mut().zip(w.iter()) {
                    *zi -= wi * vk;
                }
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            rhs[old] = z[new];
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Reverse Cuthill-McKee per connected component, with high-degree nodes
/// moved to the end.
fn ordering(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = adj.iter().map(Vec::len).sum::<usize>() as f64 / n as f64;
    let heavy_cut = (10.0 * mean).max(64.0) as usize;
    let heavy: Vec<bool> = adj.iter().map(|a| a.len() > heavy_cut).collect();
    let deg = |v: usize| adj[v].iter().filter(|&&u| !heavy[u]).count();

    let mut visited = heavy.clone();
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).filter(|&v| !heavy[v]).collect();
    by_degree.sort_by_key(|&v| (deg(v), v));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = peripheral(adj, &heavy, seed, &deg);
        let mut queue = VecDeque::new();
        let mut comp = Vec::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            comp.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| (deg(u), u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
        comp.reverse();
        order.extend(comp);
    }
    order.extend((0..n).filter(|&v| heavy[v]));
    order
}

/// Pseudo-peripheral node by repeated BFS from `seed`.
fn peripheral(
    adj: &[Vec<usize>],
    heavy: &[bool],
    seed: usize,
    deg: &dyn Fn(usize) -> usize,
) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..4 {
        let mut level = vec![usize::MAX; adj.len()];
        level[node] = 0;
        let mut queue = VecDeque::from([node]);
        let mut last = vec![node];
        let mut depth = 0;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if heavy[u] || level[u] != usize::MAX {
                    continue;
                }
                level[u] = level[v] + 1;
                if level[u] > depth {
                    depth = level[u];
                    last.clear();
                }
                if level[u] == depth {
                    last.push(u);
                }
                queue.push_back(u);
            }
        }
        if depth <= ecc && ecc > 0 {
            break;
        }
        ecc = depth;
        node = *last
            .iter()
            .min_by_key(|&&u| (deg(u), u))
            .expect("level set is non-empty");
    }
    node
}
