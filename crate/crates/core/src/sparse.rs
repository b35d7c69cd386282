//! Sparse LDLᵀ factorization for symmetric positive definite systems.
//!
//! The factor is computed on a minimum-degree permutation of the matrix using
//! row-merge elimination on sorted sparse rows. Grid susceptance matrices are
//! small and very sparse, so this keeps fill low without a symbolic phase.

use std::collections::{BTreeMap, BTreeSet};

/// Symmetric matrix assembled from triplets; only one triangle need be supplied
/// per off-diagonal pair, duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct SymmetricBuilder {
    n: usize,
    diag: Vec<f64>,
    off: BTreeMap<(usize, usize), f64>,
}

impl SymmetricBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            diag: vec![0.0; n],
            off: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if i == j {
            self.diag[i] += v;
        } else {
            *self.off.entry((i.min(j), i.max(j))).or_insert(0.0) += v;
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for (i, d) in self.diag.iter().enumerate() {
            a[i][i] = *d;
        }
        for (&(i, j), &v) in &self.off {
            a[i][j] = v;
            a[j][i] = v;
        }
        a
    }

    pub fn factor(&self) -> Result<LdlFactor, f64> {
        LdlFactor::new(self)
    }
}

/// Greedy minimum-degree elimination order on the sparsity graph.
fn min_degree_order(n: usize, off: &BTreeMap<(usize, usize), f64>) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(i, j) in off.keys() {
        adj[i].insert(j);
        adj[j].insert(i);
    }
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| alive[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .expect("vertex left");
        alive[v] = false;
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
            for &b in &nbrs {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
        adj[v].clear();
        order.push(v);
    }
    order
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    /// perm[k] = original index eliminated at step k.
    perm: Vec<usize>,
    /// Strictly lower columns of L in permuted indices: col k holds (i > k, l_ik).
    cols: Vec<Vec<(usize, f64)>>,
    d: Vec<f64>,
}

impl LdlFactor {
    fn new(a: &SymmetricBuilder) -> Result<Self, f64> {
        let n = a.n;
        let perm = min_degree_order(n, &a.off);
        let mut pos = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            pos[p] = k;
        }

        let mut diag: Vec<f64> = perm.iter().map(|&p| a.diag[p]).collect();
        // Upper part in permuted coordinates: rows[i] holds (j > i, a_ij).
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for (&(i, j), &v) in &a.off {
            let (pi, pj) = (pos[i], pos[j]);
            let (r, c) = (pi.min(pj), pi.max(pj));
            *rows[r].entry(c).or_insert(0.0) += v;
        }

        let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(f64::MIN_POSITIVE);
        let mut cols = Vec::with_capacity(n);
        for k in 0..n {
            let dk = diag[k];
            if !(dk > 1e-12 * scale) {
                return Err(dk);
            }
            let row: Vec<(usize, f64)> = std::mem::take(&mut rows[k]).into_iter().collect();
            for (ai, &(i, aki)) in row.iter().enumerate() {
                let lik = aki / dk;
                diag[i] -= lik * aki;
                for &(j, akj) in &row[ai + 1..] {
                    *rows[i].entry(j).or_insert(0.0) -= lik * akj;
                }
            }
            cols.push(row.into_iter().map(|(i, v)| (i, v / dk)).collect());
        }
        Ok(Self { perm, cols, d: diag })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored off-diagonal entries of L.
    pub fn nnz(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for k in 0..n {
            let yk = y[k];
            if yk != 0.0 {
                for &(i, l) in &self.cols[k] {
                    y[i] -= l * yk;
                }
            }
        }
        for (yk, dk) in y.iter_mut().zip(&self.d) {
            *yk /= dk;
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for &(i, l) in &self.cols[k] {
                s -= l * y[i];
            }
            y[k] = s;
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }
}
