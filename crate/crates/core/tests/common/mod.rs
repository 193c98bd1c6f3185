//! Brute-force references shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Undirected weighted edge list `(i, j, w)` with `i < j`.
pub type Edges = Vec<(usize, usize, f64)>;

/// Random spanning tree plus extra edges; always connected.
pub fn random_connected_graph<R: Rng>(rng: &mut R, n: usize, extra: usize) -> Edges {
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        edges.push((j, i, rng.random_range(0.05..1.0)));
    }
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((a.min(b), a.max(b), rng.random_range(0.05..1.0)));
        }
    }
    edges
}

/// Dense Laplacian, summing repeated edges.
pub fn dense_laplacian(n: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for &(i, j, w) in edges {
        l[(i, j)] -= w;
        l[(j, i)] -= w;
        l[(i, i)] += w;
        l[(j, j)] += w;
    }
    l
}

/// `(L / c_l + (1 + gamma / c_l) I)^-1 y` by LU.
pub fn dense_soft_harmonic(l: &DMatrix<f64>, y: &[f64], c_l: f64, gamma: f64) -> Vec<f64> {
    let n = l.nrows();
    let a = l / c_l + DMatrix::identity(n, n) * (1.0 + gamma / c_l);
    let x = a
        .lu()
        .solve(&DVector::from_row_slice(y))
        .expect("regularized system is nonsingular");
    x.iter().copied().collect()
}

/// Replaces node `i` by `mult[i]` copies; copies of `i` and `j` are joined
/// with weight `w_ij`, copies of the same node are not joined. Returns the
/// expanded edge list and the owner of every copy.
pub fn expand(edges: &[(usize, usize, f64)], mult: &[usize]) -> (Edges, Vec<usize>) {
    let mut first = Vec::with_capacity(mult.len());
    let mut owner = Vec::new();
    for (i, &m) in mult.iter().enumerate() {
        first.push(owner.len());
        owner.extend(std::iter::repeat_n(i, m));
    }
    let mut out = Vec::new();
    for &(i, j, w) in edges {
        for a in 0..mult[i] {
            for b in 0..mult[j] {
                out.push((first[i] + a, first[j] + b, w));
            }
        }
    }
    (out, owner)
}

/// Doubled concordance `2 C + T` over all pairs with distinct truth, by
/// direct enumeration.
pub fn brute_force_concordance(pred: &[f64], truth: &[f64]) -> (u64, u64) {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            if truth[i] == truth[j] {
                continue;
            }
            pairs += 1;
            let (hi, lo) = if truth[i] > truth[j] { (i, j) } else { (j, i) };
            if pred[hi] > pred[lo] {
                twice += 2;
            } else if pred[hi] == pred[lo] {
                twice += 1;
            }
        }
    }
    (twice, pairs)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
