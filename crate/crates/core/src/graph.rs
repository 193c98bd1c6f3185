//! Weighted k-NN similarity graphs and their unnormalized Laplacians.
//!
//! Edge weights are RBF similarities `exp(-d / sigma^2)` where `d` is the
//! feature-weighted squared distance. Neighbor lists are symmetrized by
//! union, so every node keeps at least `k` incident edges.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::eval::auc_from_scores;
use crate::label::{class_counts, Label};
use crate::matrix::{CsrMatrix, FeatureMatrix};

/// Pair budget above which the length-scale heuristic subsamples pairs.
pub const SIGMA_MAX_PAIRS: usize = 1_000_000;
const SIGMA_SUBSAMPLE_SEED: u64 = 0x05ee_d0f5_169a;

/// Non-negative per-feature weights applied inside the squared distance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWeights(Vec<f64>);

impl FeatureWeights {
    pub fn new(psi: Vec<f64>) -> Result<Self> {
        if psi.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "feature weights must be finite and non-negative".into(),
            ));
        }
        if !psi.iter().any(|&w| w > 0.0) {
            return Err(Error::InvalidParameter(
                "at least one feature weight must be positive".into(),
            ));
        }
        Ok(Self(psi))
    }

    pub fn uniform(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    /// Weights each feature by `|2 AUC - 1|`, the univariate Wilcoxon
    /// discrimination of the feature as a scorer for the positive class.
    ///
    /// A constant feature has AUC exactly one half under midranks and so
    /// receives weight zero.
    pub fn wilcoxon(x: &FeatureMatrix, labels: &[Label]) -> Result<Self> {
        check_len(x.n_rows(), labels.len())?;
        let (pos, neg) = class_counts(labels);
        if pos == 0 || neg == 0 {
            return Err(Error::DegenerateLabels(
                "feature weighting needs examples of both classes".into(),
            ));
        }
        let positives: Vec<bool> = labels.iter().map(|&l| l == Label::Positive).collect();
        let psi = (0..x.n_cols())
            .into_par_iter()
            .map(|f| {
                let column: Vec<f64> = x.rows().map(|r| r[f]).collect();
                auc_from_scores(&column, &positives).map(|auc| (2.0 * auc - 1.0).abs())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(psi)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `sum_f psi_f (a_f - b_f)^2`.
pub fn weighted_sq_distance(a: &[f64], b: &[f64], psi: &FeatureWeights) -> Result<f64> {
    check_len(a.len(), b.len())?;
    check_len(a.len(), psi.len())?;
    Ok(wsq(a, b, psi.as_slice()))
}

#[inline]
pub(crate) fn wsq(a: &[f64], b: &[f64], psi: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(psi)
        .map(|((x, y), w)| {
            let d = x - y;
            w * d * d
        })
        .sum()
}

/// Running population moments, merged in a fixed order so parallel
/// accumulation stays deterministic.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Self) -> Self {
        if other.count == 0.0 {
            return self;
        }
        if self.count == 0.0 {
            return other;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Self {
            count,
            mean: self.mean + delta * other.count / count,
            m2: self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        }
    }

    fn variance(&self) -> f64 {
        self.m2 / self.count
    }
}

/// Length scale set to one tenth of the population variance of pairwise
/// weighted Euclidean distances. The RBF denominator is the square of the
/// returned value.
pub fn sigma_heuristic(x: &FeatureMatrix, psi: &FeatureWeights) -> Result<f64> {
    sigma_heuristic_with(x, psi, SIGMA_MAX_PAIRS, SIGMA_SUBSAMPLE_SEED)
}

/// [`sigma_heuristic`] with an explicit pair budget and subsampling seed.
pub fn sigma_heuristic_with(
    x: &FeatureMatrix,
    psi: &FeatureWeights,
    max_pairs: usize,
    seed: u64,
) -> Result<f64> {
    let n = x.n_rows();
    if n < 2 {
        return Err(Error::DegenerateGeometry(
            "length-scale heuristic needs at least two points".into(),
        ));
    }
    check_len(x.n_cols(), psi.len())?;
    let w = psi.as_slice();
    let total_pairs = n * (n - 1) / 2;
    let moments = if total_pairs <= max_pairs {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut m = Moments::default();
                for j in (i + 1)..n {
                    m.push(wsq(x.row(i), x.row(j), w).sqrt());
                }
                m
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(Moments::default(), Moments::merge)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Moments::default();
        for _ in 0..max_pairs {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            m.push(wsq(x.row(i), x.row(j), w).sqrt());
        }
        m
    };
    let var = moments.variance();
    if !(var > 0.0) {
        return Err(Error::DegenerateGeometry(
            "pairwise distances have zero variance".into(),
        ));
    }
    Ok(0.1 * var)
}

/// Sparse symmetric RBF similarity graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    weights: CsrMatrix,
    degrees: Vec<f64>,
    sigma: f64,
    k: usize,
}

impl SimilarityGraph {
    /// Wraps a weight matrix after checking symmetry, the zero diagonal and
    /// the `[0, 1]` weight range.
    pub fn from_weights(weights: CsrMatrix, sigma: f64, k: usize) -> Result<Self> {
        if !weights.is_symmetric() {
            return Err(Error::InvalidParameter("weights must be symmetric".into()));
        }
        for (i, j, v) in weights.triplets() {
            if i == j && v != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "nonzero diagonal weight at node {i}"
                )));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "weight {v} at ({i}, {j}) outside [0, 1]"
                )));
            }
        }
        let degrees = weights.row_sums();
        Ok(Self {
            weights,
            degrees,
            sigma,
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.n()
    }

    pub fn weights(&self) -> &CsrMatrix {
        &self.weights
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn laplacian(&self) -> Laplacian {
        Laplacian::from_weights(
            &self.weights,
            GraphSource::Similarity {
                k: self.k,
                sigma: self.sigma,
            },
        )
    }

    /// Writes the sparse triplet text format: a header line
    /// `# n=<n> k=<k> sigma=<sigma>` followed by one `row col weight` line per
    /// stored entry (both orientations of every edge).
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# n={} k={} sigma={}", self.n(), self.k, self.sigma)?;
        for (i, j, v) in self.weights.triplets() {
            writeln!(out, "{i} {j} {v}")?;
        }
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty graph file".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let fields = parse_header(&header)?;
        let n: usize = header_field(&fields, "n")?;
        let k: usize = header_field(&fields, "k")?;
        let sigma: f64 = header_field(&fields, "sigma")?;
        let mut triplets = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            triplets.push(parse_triplet(&line)?);
        }
        Self::from_weights(CsrMatrix::from_triplets(n, triplets)?, sigma, k)
    }
}

pub(crate) fn parse_header(line: &str) -> Result<Vec<(String, String)>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse(format!("expected '#' header, got '{line}'")))?;
    body.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Parse(format!("malformed header field '{kv}'")))
        })
        .collect()
}

pub(crate) fn header_field<T: std::str::FromStr>(
    fields: &[(String, String)],
    key: &str,
) -> Result<T> {
    let raw = fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::Parse(format!("header missing '{key}'")))?;
    raw.parse()
        .map_err(|_| Error::Parse(format!("bad value '{raw}' for '{key}'")))
}

pub(crate) fn parse_triplet(line: &str) -> Result<(usize, usize, f64)> {
    let mut it = line.split_whitespace();
    let bad = || Error::Parse(format!("malformed triplet line '{line}'"));
    let i = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let j = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let v = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    Ok((i, j, v))
}

/// Indices of the `k` nearest rows to `i` (excluding `i`), with their
/// weighted squared distances. Ties go to the lower index.
pub(crate) fn nearest_neighbors(
    x: &FeatureMatrix,
    psi: &[f64],
    i: usize,
    k: usize,
) -> Vec<(usize, f64)> {
    let xi = x.row(i);
    let mut cand: Vec<(usize, f64)> = (0..x.n_rows())
        .filter(|&j| j != i)
        .map(|j| (j, wsq(xi, x.row(j), psi)))
        .collect();
    let by_dist = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
        a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
    };
    if k < cand.len() {
        cand.select_nth_unstable_by(k, by_dist);
        cand.truncate(k);
    }
    cand.sort_by(by_dist);
    cand
}

/// Builds the union-symmetrized k-NN graph with weights `exp(-d / sigma^2)`.
pub fn build_knn_graph(
    x: &FeatureMatrix,
    psi: &FeatureWeights,
    sigma: f64,
    k: usize,
) -> Result<SimilarityGraph> {
    let n = x.n_rows();
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "neighbor count k={k} must satisfy 1 <= k < n={n}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "length scale must be positive, got {sigma}"
        )));
    }
    check_len(x.n_cols(), psi.len())?;
    x.check_finite()?;
    let w = psi.as_slice();
    let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| nearest_neighbors(x, w, i, k))
        .collect();

    let mut edges: Vec<(usize, usize, f64)> = neighbors
        .iter()
        .enumerate()
        .flat_map(|(i, nb)| nb.iter().map(move |&(j, d)| (i.min(j), i.max(j), d)))
        .collect();
    edges.sort_by_key(|e| (e.0, e.1));
    edges.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);

    let s2 = sigma * sigma;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, j, d) in edges {
        let wij = (-d / s2).exp();
        rows[i].push((j, wij));
        rows[j].push((i, wij));
    }
    let weights = CsrMatrix::from_row_lists(n, rows);
    let degrees = weights.row_sums();
    Ok(SimilarityGraph {
        weights,
        degrees,
        sigma,
        k,
    })
}

/// Where a Laplacian's weight matrix came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphSource {
    Similarity {
        k: usize,
        sigma: f64,
    },
    /// Multiplicity-weighted backbone weights `V W V`.
    Compact {
        k: usize,
        sigma: f64,
    },
    Custom,
}

/// Unnormalized graph Laplacian `D - W`, stored sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    matrix: CsrMatrix,
    source: GraphSource,
}

impl Laplacian {
    /// `D - W` for any symmetric non-negative weight matrix. Stored diagonal
    /// entries of `w` are ignored.
    pub fn from_weights(w: &CsrMatrix, source: GraphSource) -> Self {
        let n = w.n();
        let rows = (0..n)
            .map(|i| {
                let mut degree = 0.0;
                let mut row: Vec<(usize, f64)> = Vec::new();
                for (j, v) in w.row(i) {
                    if j != i {
                        degree += v;
                        row.push((j, -v));
                    }
                }
                row.push((i, degree));
                row
            })
            .collect();
        Self {
            matrix: CsrMatrix::from_row_lists(n, rows),
            source,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn source(&self) -> GraphSource {
        self.source
    }
}

/// `D - W` of a similarity graph.
pub fn laplacian(g: &SimilarityGraph) -> Laplacian {
    g.laplacian()
}
