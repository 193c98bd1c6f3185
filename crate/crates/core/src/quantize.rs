//! Backbone graphs: a sampled subset of training points standing in for the
//! full set, each centroid weighted by how many training points it absorbs.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::graph::{
    build_knn_graph, header_field, parse_header, parse_triplet, wsq, FeatureWeights, GraphSource,
    Laplacian, SimilarityGraph,
};
use crate::label::Label;
use crate::matrix::{CsrMatrix, FeatureMatrix};
use crate::solver::{soft_harmonic_backbone, SoftLabels, SolverConfig, TargetVector};

/// Rows of the training matrix chosen as centroids, in ascending row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentroidSet {
    pub indices: Vec<usize>,
    pub labels: Vec<Label>,
}

impl CentroidSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Every row is its own centroid.
    pub fn all(labels: &[Label]) -> Self {
        Self {
            indices: (0..labels.len()).collect(),
            labels: labels.to_vec(),
        }
    }
}

/// Samples `k_per_class` distinct rows of each class uniformly without
/// replacement.
pub fn select_centroids(labels: &[Label], k_per_class: usize, seed: u64) -> Result<CentroidSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::with_capacity(2 * k_per_class);
    for class in Label::BOTH {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k_per_class {
            return Err(Error::ClassTooSmall {
                label: class.into(),
                needed: k_per_class,
                available: members.len(),
            });
        }
        let picked = rand::seq::index::sample(&mut rng, members.len(), k_per_class);
        indices.extend(picked.into_iter().map(|p| members[p]));
    }
    indices.sort_unstable();
    let labels = indices.iter().map(|&i| labels[i]).collect();
    Ok(CentroidSet { indices, labels })
}

/// Assigns each row to its nearest centroid of the same class and counts the
/// rows per centroid. Centroid rows count toward themselves; distance ties go
/// to the lower centroid position.
pub fn assign_multiplicities(
    x: &FeatureMatrix,
    labels: &[Label],
    centroids: &CentroidSet,
    psi: &FeatureWeights,
) -> Result<Vec<usize>> {
    check_len(x.n_rows(), labels.len())?;
    check_len(x.n_cols(), psi.len())?;
    let w = psi.as_slice();
    let mut own = vec![None; x.n_rows()];
    for (c, &row) in centroids.indices.iter().enumerate() {
        own[row] = Some(c);
    }
    let assignment = (0..x.n_rows())
        .into_par_iter()
        .map(|i| {
            if let Some(c) = own[i] {
                return Ok(c);
            }
            let mut best: Option<(f64, usize)> = None;
            for (c, &row) in centroids.indices.iter().enumerate() {
                if centroids.labels[c] != labels[i] {
                    continue;
                }
                let d = wsq(x.row(i), x.row(row), w);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, c));
                }
            }
            best.map(|(_, c)| c)
                .ok_or(Error::MissingCentroidClass(labels[i].into()))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut counts = vec![0; centroids.len()];
    for c in assignment {
        counts[c] += 1;
    }
    Ok(counts)
}

/// Node set with multiplicities, its similarity graph `W` and the compact
/// weights `V W V`.
#[derive(Debug, Clone)]
pub struct BackboneGraph {
    nodes: FeatureMatrix,
    labels: Vec<Label>,
    multiplicities: Vec<usize>,
    graph: SimilarityGraph,
    compact: CsrMatrix,
}

impl BackboneGraph {
    /// Connects the given weighted nodes by k-NN and forms `V W V`.
    pub fn from_nodes(
        nodes: FeatureMatrix,
        labels: Vec<Label>,
        multiplicities: Vec<usize>,
        psi: &FeatureWeights,
        sigma: f64,
        k_nn: usize,
    ) -> Result<Self> {
        check_len(nodes.n_rows(), labels.len())?;
        check_len(nodes.n_rows(), multiplicities.len())?;
        if let Some(i) = multiplicities.iter().position(|&v| v == 0) {
            return Err(Error::InvalidParameter(format!(
                "multiplicity of node {i} must be positive"
            )));
        }
        let graph = build_knn_graph(&nodes, psi, sigma, k_nn)?;
        let compact = compact_weights(graph.weights(), &multiplicities)?;
        Ok(Self {
            nodes,
            labels,
            multiplicities,
            graph,
            compact,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn nodes(&self) -> &FeatureMatrix {
        &self.nodes
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    /// Similarity graph `W` over the centroids.
    pub fn graph(&self) -> &SimilarityGraph {
        &self.graph
    }

    /// `V W V`.
    pub fn compact_weights(&self) -> &CsrMatrix {
        &self.compact
    }

    pub fn laplacian(&self) -> Laplacian {
        Laplacian::from_weights(
            &self.compact,
            GraphSource::Compact {
                k: self.graph.k(),
                sigma: self.graph.sigma(),
            },
        )
    }

    pub fn targets(&self) -> TargetVector {
        TargetVector::from_labels(&self.labels)
    }

    /// Multiplicity-adjusted soft labels for every node.
    pub fn solve(&self, cfg: &SolverConfig) -> Result<SoftLabels> {
        soft_harmonic_backbone(
            &self.laplacian(),
            &self.multiplicities,
            &self.targets(),
            cfg,
        )
    }

    /// Graph triplet format extended with one `v <node> <label> <multiplicity>`
    /// line per node ahead of the `row col weight` lines of `W`.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# n={} k={} sigma={} backbone=1",
            self.n(),
            self.graph.k(),
            self.graph.sigma()
        )?;
        for (i, (l, v)) in self.labels.iter().zip(&self.multiplicities).enumerate() {
            writeln!(out, "v {i} {l} {v}")?;
        }
        for (i, j, w) in self.graph.weights().triplets() {
            writeln!(out, "{i} {j} {w}")?;
        }
        Ok(())
    }
}

/// Graph, labels and multiplicities read back from the backbone triplet format.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneRecord {
    pub graph: SimilarityGraph,
    pub labels: Vec<Label>,
    pub multiplicities: Vec<usize>,
}

impl BackboneRecord {
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty backbone file".into()))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let fields = parse_header(&header)?;
        let n: usize = header_field(&fields, "n")?;
        let k: usize = header_field(&fields, "k")?;
        let sigma: f64 = header_field(&fields, "sigma")?;
        let mut labels = Vec::with_capacity(n);
        let mut multiplicities = Vec::with_capacity(n);
        let mut triplets = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if let Some(rest) = line.strip_prefix("v ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let bad = || Error::Parse(format!("malformed node line '{line}'"));
                if parts.len() != 3 || parts[0].parse::<usize>().ok() != Some(labels.len()) {
                    return Err(bad());
                }
                let l: i8 = parts[1]
                    .trim_start_matches('+')
                    .parse()
                    .map_err(|_| bad())?;
                labels.push(Label::try_from(l)?);
                multiplicities.push(parts[2].parse().map_err(|_| bad())?);
            } else if !line.trim().is_empty() {
                triplets.push(parse_triplet(&line)?);
            }
        }
        check_len(n, labels.len())?;
        let graph =
            SimilarityGraph::from_weights(CsrMatrix::from_triplets(n, triplets)?, sigma, k)?;
        Ok(Self {
            graph,
            labels,
            multiplicities,
        })
    }
}

/// `V W V` entry-wise: `v_i v_j w_ij`.
pub fn compact_weights(w: &CsrMatrix, multiplicities: &[usize]) -> Result<CsrMatrix> {
    let v: Vec<f64> = multiplicities.iter().map(|&m| m as f64).collect();
    w.scale_symmetric(&v)
}

/// Samples centroids, counts multiplicities and builds the backbone graph.
/// `k_per_class = None` keeps every training row as its own centroid.
pub fn build_backbone(
    x: &FeatureMatrix,
    labels: &[Label],
    psi: &FeatureWeights,
    sigma: f64,
    k_per_class: Option<usize>,
    k_nn: usize,
    seed: u64,
) -> Result<BackboneGraph> {
    check_len(x.n_rows(), labels.len())?;
    let centroids = match k_per_class {
        Some(k) => select_centroids(labels, k, seed)?,
        None => CentroidSet::all(labels),
    };
    let multiplicities = assign_multiplicities(x, labels, &centroids, psi)?;
    BackboneGraph::from_nodes(
        x.select_rows(&centroids.indices),
        centroids.labels,
        multiplicities,
        psi,
        sigma,
        k_nn,
    )
}
