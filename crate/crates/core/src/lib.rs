//! Conditional anomaly detection with regularized soft harmonic label
//! propagation.
//!
//! Every observed example is a labeled node of a k-NN similarity graph. Soft
//! labels come from one sparse symmetric positive definite solve, and an
//! instance is anomalous when its soft label disagrees with its observed
//! label. A backbone of sampled centroids with multiplicities keeps the graph
//! small for large training sets.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cad;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod label;
pub mod matrix;
pub mod quantize;
pub mod seed;
pub mod solver;

pub use cad::{
    anomaly_scores, apply_task_scaler, fit_task_scaler, score_multitask, score_recent,
    AnomalyScores, CadParams, FeatureWeighting, TaskScaler,
};
pub use data::{Dataset, Role};
pub use error::{Error, Result};
pub use graph::{build_knn_graph, laplacian, FeatureWeights, Laplacian, SimilarityGraph};
pub use label::Label;
pub use matrix::{CsrMatrix, FeatureMatrix};
pub use quantize::{build_backbone, BackboneGraph};
pub use solver::{soft_harmonic, soft_harmonic_backbone, SoftLabels, SolverConfig, TargetVector};
