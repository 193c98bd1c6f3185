//! Conditional anomaly scoring of recent examples against past ones.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::graph::{sigma_heuristic, FeatureWeights};
use crate::label::{class_counts, Label};
use crate::quantize::{assign_multiplicities, select_centroids, BackboneGraph, CentroidSet};
use crate::solver::{SoftLabels, SolverConfig, TargetVector};

/// Per-instance scores and their ranking (descending, ties by index).
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScores {
    pub raw: Vec<f64>,
    pub scaled: Option<Vec<f64>>,
    pub ranking: Vec<usize>,
}

impl AnomalyScores {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let ranking = rank_descending(&raw);
        Self {
            raw,
            scaled: None,
            ranking,
        }
    }

    pub fn empty() -> Self {
        Self::from_raw(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// 1-based rank of every instance.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.raw.len()];
        for (pos, &i) in self.ranking.iter().enumerate() {
            r[i] = pos + 1;
        }
        r
    }

    pub fn with_scaler(mut self, scaler: &TaskScaler) -> Self {
        self.scaled = Some(self.raw.iter().map(|&s| scaler.apply(s)).collect());
        self
    }
}

pub(crate) fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// `s_i = |l_i - y_i|`.
pub fn anomaly_scores(ell: &SoftLabels, y: &TargetVector) -> Result<AnomalyScores> {
    check_len(y.len(), ell.ell.len())?;
    Ok(AnomalyScores::from_raw(
        ell.ell
            .iter()
            .zip(y.as_slice())
            .map(|(l, t)| (l - t).abs())
            .collect(),
    ))
}

/// Linear map of a task's training score range onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScaler {
    pub min_score: f64,
    pub max_score: f64,
}

impl TaskScaler {
    /// Not clamped: scores outside the training range map outside `[0, 1]`.
    pub fn apply(&self, s: f64) -> f64 {
        (s - self.min_score) / (self.max_score - self.min_score)
    }
}

pub fn fit_task_scaler(train_scores: &[f64]) -> Result<TaskScaler> {
    let min_score = train_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max_score = train_scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max_score > min_score) || !min_score.is_finite() || !max_score.is_finite() {
        return Err(Error::DegenerateTask(
            "training scores need at least two distinct finite values".into(),
        ));
    }
    Ok(TaskScaler {
        min_score,
        max_score,
    })
}

pub fn apply_task_scaler(scaler: &TaskScaler, s: f64) -> f64 {
    scaler.apply(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureWeighting {
    #[default]
    Uniform,
    Wilcoxon,
}

impl FromStr for FeatureWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "wilcoxon" => Ok(Self::Wilcoxon),
            _ => Err(Error::Parse(format!("unknown feature weighting '{s}'"))),
        }
    }
}

impl FeatureWeighting {
    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Wilcoxon => "wilcoxon",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CadParams {
    /// Neighbors per node; capped at the node count minus one.
    pub k: usize,
    pub solver: SolverConfig,
    /// Centroids sampled per class from the past set; `None` keeps all rows.
    pub k_per_class: Option<usize>,
    pub weighting: FeatureWeighting,
    /// Fixed length scale instead of the variance heuristic.
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl Default for CadParams {
    fn default() -> Self {
        Self {
            k: 75,
            solver: SolverConfig::default(),
            k_per_class: None,
            weighting: FeatureWeighting::Uniform,
            sigma: None,
            seed: 0,
        }
    }
}

impl CadParams {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.k_per_class == Some(0) {
            return Err(Error::InvalidParameter(
                "k_per_class must be at least 1".into(),
            ));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "sigma must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Backbone over past centroids with recent rows appended as
/// multiplicity-one nodes (node order: centroids, then recent rows).
#[derive(Debug, Clone)]
pub struct CadGraph {
    pub backbone: BackboneGraph,
    /// Past rows serving as centroids, ascending.
    pub centroid_rows: Vec<usize>,
    pub psi: FeatureWeights,
    pub sigma: f64,
}

impl CadGraph {
    pub fn n_centroids(&self) -> usize {
        self.centroid_rows.len()
    }

    pub fn n_recent(&self) -> usize {
        self.backbone.n() - self.n_centroids()
    }
}

fn ensure_both_classes(labels: &[Label], what: &str) -> Result<()> {
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(Error::DegenerateLabels(format!(
            "{what} must contain both classes (found {p} positive, {n} negative)"
        )));
    }
    Ok(())
}

pub fn build_cad_graph(past: &Dataset, recent: &Dataset, params: &CadParams) -> Result<CadGraph> {
    params.validate()?;
    if past.is_empty() {
        return Err(Error::InvalidParameter("past set is empty".into()));
    }
    ensure_both_classes(&past.labels, "past set")?;
    past.features.check_finite()?;
    recent.features.check_finite()?;
    if !recent.is_empty() {
        check_len(past.dim(), recent.dim())?;
    }

    let psi = match params.weighting {
        FeatureWeighting::Uniform => FeatureWeights::uniform(past.dim()),
        FeatureWeighting::Wilcoxon => FeatureWeights::wilcoxon(&past.features, &past.labels)?,
    };
    let all = if recent.is_empty() {
        past.features.clone()
    } else {
        past.features.vstack(&recent.features)?
    };
    let sigma = match params.sigma {
        Some(s) => s,
        None => sigma_heuristic(&all, &psi)?,
    };

    let centroids = match params.k_per_class {
        Some(k) => select_centroids(&past.labels, k, params.seed)?,
        None => CentroidSet::all(&past.labels),
    };
    let mut multiplicities = assign_multiplicities(&past.features, &past.labels, &centroids, &psi)?;
    multiplicities.extend(std::iter::repeat_n(1, recent.len()));
    let mut nodes = past.features.select_rows(&centroids.indices);
    if !recent.is_empty() {
        nodes = nodes.vstack(&recent.features)?;
    }
    let mut labels = centroids.labels.clone();
    labels.extend_from_slice(&recent.labels);
    let k = params.k.min(nodes.n_rows().saturating_sub(1));
    let backbone = BackboneGraph::from_nodes(nodes, labels, multiplicities, &psi, sigma, k)?;
    Ok(CadGraph {
        backbone,
        centroid_rows: centroids.indices,
        psi,
        sigma,
    })
}

/// Scores of one past/recent scoring run.
#[derive(Debug, Clone)]
pub struct CadOutput {
    /// One score per recent row.
    pub recent: AnomalyScores,
    /// One score per centroid; every past row shares its centroid's score.
    pub past: AnomalyScores,
    pub centroid_rows: Vec<usize>,
    pub sigma: f64,
    pub iterations: usize,
}

pub fn score_recent(past: &Dataset, recent: &Dataset, params: &CadParams) -> Result<CadOutput> {
    let g = build_cad_graph(past, recent, params)?;
    let soft = g.backbone.solve(&params.solver)?;
    let scores = anomaly_scores(&soft, &g.backbone.targets())?;
    let c = g.n_centroids();
    Ok(CadOutput {
        past: AnomalyScores::from_raw(scores.raw[..c].to_vec()),
        recent: AnomalyScores::from_raw(scores.raw[c..].to_vec()),
        centroid_rows: g.centroid_rows,
        sigma: g.sigma,
        iterations: soft.iterations,
    })
}

/// One label column of a multi-task problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub name: String,
    pub past_labels: Vec<Label>,
    pub recent_labels: Vec<Label>,
}

#[derive(Debug, Clone)]
pub enum TaskOutcome {
    Scored {
        name: String,
        scaler: TaskScaler,
        scores: AnomalyScores,
    },
    Skipped {
        name: String,
        reason: String,
    },
}

impl TaskOutcome {
    pub fn name(&self) -> &str {
        match self {
            TaskOutcome::Scored { name, .. } | TaskOutcome::Skipped { name, .. } => name,
        }
    }
}

/// Scores every task independently and scales recent scores by the task's
/// past score range. Tasks without both classes in the past set are skipped.
pub fn score_multitask(
    past: &Dataset,
    recent: &Dataset,
    tasks: &[Task],
    params: &CadParams,
) -> Result<Vec<TaskOutcome>> {
    tasks
        .par_iter()
        .map(|task| {
            check_len(past.len(), task.past_labels.len())?;
            check_len(recent.len(), task.recent_labels.len())?;
            if let Err(e) = ensure_both_classes(&task.past_labels, "past set") {
                return Ok(TaskOutcome::Skipped {
                    name: task.name.clone(),
                    reason: e.to_string(),
                });
            }
            let p = Dataset {
                labels: task.past_labels.clone(),
                ..past.clone()
            };
            let r = Dataset {
                labels: task.recent_labels.clone(),
                ..recent.clone()
            };
            let out = score_recent(&p, &r, params)?;
            let scaler = match fit_task_scaler(&out.past.raw) {
                Ok(s) => s,
                Err(e) => {
                    return Ok(TaskOutcome::Skipped {
                        name: task.name.clone(),
                        reason: e.to_string(),
                    })
                }
            };
            Ok(TaskOutcome::Scored {
                name: task.name.clone(),
                scaler,
                scores: out.recent.with_scaler(&scaler),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_knn_graph, laplacian};
    use crate::matrix::FeatureMatrix;
    use crate::solver::{dense_solve_oracle, dense_system};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (cx, label) in [(-2.0, Label::Positive), (2.0, Label::Negative)] {
            for _ in 0..n {
                rows.push([cx + noise.sample(&mut rng), noise.sample(&mut rng)]);
                labels.push(label);
            }
        }
        Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    fn recent(rows: &[[f64; 2]], labels: &[Label]) -> Dataset {
        Dataset::new(FeatureMatrix::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_fit_scores_zero() {
        let s = SoftLabels {
            ell: vec![1.0, -1.0],
            residual: 0.0,
            iterations: 0,
        };
        let y = TargetVector::new(vec![1.0, -1.0]).unwrap();
        assert_eq!(anomaly_scores(&s, &y).unwrap().raw, vec![0.0, 0.0]);
    }

    #[test]
    fn two_node_scores() {
        let s = SoftLabels {
            ell: vec![1.0 / 3.0, -1.0 / 3.0],
            residual: 0.0,
            iterations: 0,
        };
        let y = TargetVector::new(vec![1.0, -1.0]).unwrap();
        let a = anomaly_scores(&s, &y).unwrap();
        assert!((a.raw[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.ranking, vec![0, 1]);
    }

    #[test]
    fn isolated_score_below_wrong_sign_score() {
        let s = SoftLabels {
            ell: vec![0.0, -0.01],
            residual: 0.0,
            iterations: 0,
        };
        let y = TargetVector::new(vec![1.0, 1.0]).unwrap();
        let a = anomaly_scores(&s, &y).unwrap();
        assert_eq!(a.raw[0], 1.0);
        assert!(a.raw[0] < a.raw[1]);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let a = AnomalyScores::from_raw(vec![0.5, 1.0, 0.5, 1.0]);
        assert_eq!(a.ranking, vec![1, 3, 0, 2]);
        assert_eq!(a.ranks(), vec![3, 1, 4, 2]);
    }

    #[test]
    fn scaler_examples() {
        let a = fit_task_scaler(&[0.1, 0.5, 0.9]).unwrap();
        assert_eq!((a.min_score, a.max_score), (0.1, 0.9));
        let b = fit_task_scaler(&[0.25, 0.61]).unwrap();
        assert_eq!((b.min_score, b.max_score), (0.25, 0.61));
        let sa = apply_task_scaler(&a, 0.8);
        let sb = apply_task_scaler(&b, 0.58);
        assert!((sa - 0.875).abs() < 1e-12);
        assert!((sb - 0.33 / 0.36).abs() < 1e-12);
        assert!(sb > sa);
        let c = fit_task_scaler(&[0.0, 2.0]).unwrap();
        assert_eq!(c.apply(1.0), 0.5);
        assert_eq!(c.apply(0.0), 0.0);
        assert_eq!(c.apply(2.0), 1.0);
        assert!(c.apply(3.0) > 1.0);
        assert!(matches!(
            fit_task_scaler(&[0.3, 0.3]),
            Err(Error::DegenerateTask(_))
        ));
    }

    #[test]
    fn empty_recent_set_yields_empty_scores() {
        let past = blobs(20, 1);
        let r = Dataset::new(FeatureMatrix::empty(2), vec![]).unwrap();
        let out = score_recent(&past, &r, &CadParams::default()).unwrap();
        assert!(out.recent.is_empty());
        assert_eq!(out.past.len(), 40);
    }

    #[test]
    fn single_class_past_rejected() {
        let mut past = blobs(10, 1);
        past.labels = vec![Label::Positive; 20];
        let r = recent(&[[0.0, 0.0]], &[Label::Positive]);
        assert!(matches!(
            score_recent(&past, &r, &CadParams::default()),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn non_finite_recent_row_named() {
        let past = blobs(10, 1);
        let r = recent(&[[0.0, 0.0], [f64::NAN, 1.0]], &[Label::Positive; 2]);
        assert!(matches!(
            score_recent(&past, &r, &CadParams::default()),
            Err(Error::NonFinite { row: 1, col: 0 })
        ));
    }

    #[test]
    fn unquantized_pipeline_matches_dense_solve() {
        let past = blobs(30, 4);
        let r = recent(
            &[[-2.0, 0.1], [2.1, 0.0]],
            &[Label::Positive, Label::Positive],
        );
        let params = CadParams {
            k: 10,
            ..CadParams::default()
        };
        let out = score_recent(&past, &r, &params).unwrap();
        let both = Dataset::concat_past_recent(&past, &r).unwrap();
        let psi = FeatureWeights::uniform(2);
        let g = build_knn_graph(&both.features, &psi, out.sigma, 10).unwrap();
        let a = dense_system(&laplacian(&g), &params.solver);
        let y = TargetVector::from_labels(&both.labels);
        let ell = dense_solve_oracle(&a, y.as_slice()).unwrap();
        for (i, s) in out.recent.raw.iter().enumerate() {
            let want = (ell[60 + i] - y.as_slice()[60 + i]).abs();
            assert!((s - want).abs() < 1e-8);
        }
        // embedded duplicate of a clean point vs point inside the other class
        assert!(out.recent.raw[1] > out.recent.raw[0]);
    }

    #[test]
    fn duplicate_of_clean_point_scores_low_with_weak_sink() {
        let past = blobs(40, 6);
        let dup = past.features.row(5).to_vec();
        let r = recent(&[[dup[0], dup[1]]], &[Label::Positive]);
        let mut params = CadParams::default();
        params.solver.gamma_g = 0.01;
        let out = score_recent(&past, &r, &params).unwrap();
        assert!(out.recent.raw[0] < 0.5, "{}", out.recent.raw[0]);
        // defaults cannot go below the sink bound 1 - c_l/(c_l + gamma_g)
        let out = score_recent(&past, &r, &CadParams::default()).unwrap();
        assert!(out.recent.raw[0] >= 0.5 - 1e-9);
    }

    #[test]
    fn opposite_cluster_point_above_median() {
        let past = blobs(50, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..20 {
            let side: bool = rng.random();
            let cx = if side { -2.0 } else { 2.0 };
            rows.push([
                cx + rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ]);
            labels.push(if side {
                Label::Positive
            } else {
                Label::Negative
            });
        }
        rows.push([2.0, 0.0]);
        labels.push(Label::Positive);
        let out = score_recent(&past, &recent(&rows, &labels), &CadParams::default()).unwrap();
        let mut sorted = out.recent.raw.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!(out.recent.raw[20] > median);
        assert_eq!(out.recent.ranking[0], 20);
    }

    fn isolated_vs_embedded(seed: u64, gamma: f64) -> (f64, f64) {
        let past = blobs(60, seed);
        let r = recent(
            &[[2.0, 0.0], [0.0, 25.0]],
            &[Label::Positive, Label::Positive],
        );
        let mut params = CadParams::default();
        params.solver.gamma_g = gamma;
        let out = score_recent(&past, &r, &params).unwrap();
        (out.recent.raw[0], out.recent.raw[1])
    }

    #[test]
    fn embedded_mislabel_outranks_isolated_point() {
        for seed in 0..20 {
            for gamma in [1.0, 2.0] {
                let (a, b) = isolated_vs_embedded(seed, gamma);
                assert!(a > b, "seed {seed} gamma {gamma}: {a} <= {b}");
            }
        }
    }

    #[test]
    fn isolated_score_approaches_one_monotonically() {
        let mut prev = f64::INFINITY;
        for gamma in [0.5, 1.0, 2.0, 5.0, 20.0] {
            let (_, b) = isolated_vs_embedded(3, gamma);
            let gap = (1.0 - b).abs();
            assert!(gap <= prev + 1e-12);
            prev = gap;
        }
    }

    #[test]
    fn fringe_point_is_not_flagged() {
        for seed in 0..20 {
            let past = blobs(60, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..30 {
                rows.push([
                    -2.0 + rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                ]);
                labels.push(Label::Positive);
                rows.push([
                    2.0 + rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                ]);
                labels.push(Label::Negative);
            }
            // outer edge of the +1 cloud, away from the other class
            rows.push([-3.6, 0.0]);
            labels.push(Label::Positive);
            let out = score_recent(&past, &recent(&rows, &labels), &CadParams::default()).unwrap();
            let mut clean = out.recent.raw[..60].to_vec();
            clean.sort_by(f64::total_cmp);
            let p90 = clean[(0.9 * clean.len() as f64) as usize];
            assert!(out.recent.raw[60] < p90 + 0.05, "seed {seed}");
        }
    }

    #[test]
    fn no_compression_matches_full_graph() {
        let past = blobs(25, 9);
        let r = recent(
            &[[0.0, 0.0], [1.0, 1.0]],
            &[Label::Positive, Label::Negative],
        );
        let mut params = CadParams {
            k: 8,
            ..CadParams::default()
        };
        let full = score_recent(&past, &r, &params).unwrap();
        params.k_per_class = Some(25);
        let sampled = score_recent(&past, &r, &params).unwrap();
        for (a, b) in full.recent.raw.iter().zip(&sampled.recent.raw) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn multitask_scaling_and_skipping() {
        let past = blobs(30, 11);
        let r = recent(
            &[[-2.0, 0.0], [2.0, 0.0], [0.0, 0.0], [2.0, 0.3]],
            &[
                Label::Positive,
                Label::Negative,
                Label::Positive,
                Label::Positive,
            ],
        );
        let base = Task {
            name: "a".into(),
            past_labels: past.labels.clone(),
            recent_labels: r.labels.clone(),
        };
        let twin = Task {
            name: "b".into(),
            ..base.clone()
        };
        let mut skewed = base.clone();
        skewed.name = "c".into();
        for i in 0..10 {
            skewed.past_labels[30 + i] = Label::Positive;
        }
        let single = Task {
            name: "d".into(),
            past_labels: vec![Label::Negative; 60],
            recent_labels: r.labels.clone(),
        };
        let params = CadParams {
            k: 10,
            ..CadParams::default()
        };
        let out = score_multitask(&past, &r, &[base, twin, skewed, single], &params).unwrap();
        let scored: Vec<&AnomalyScores> = out
            .iter()
            .filter_map(|o| match o {
                TaskOutcome::Scored { scores, .. } => Some(scores),
                _ => None,
            })
            .collect();
        assert_eq!(scored.len(), 3);
        assert_eq!(scored[0].scaled, scored[1].scaled);
        for s in &scored {
            let scaled = s.scaled.as_ref().unwrap();
            assert_eq!(rank_descending(scaled), s.ranking);
        }
        assert!(matches!(&out[3], TaskOutcome::Skipped { name, .. } if name == "d"));
    }

    #[test]
    fn scaler_maps_training_range_to_unit_interval() {
        let past = blobs(30, 12);
        let params = CadParams {
            k: 10,
            ..CadParams::default()
        };
        let empty = Dataset::new(FeatureMatrix::empty(2), vec![]).unwrap();
        let out = score_recent(&past, &empty, &params).unwrap();
        let sc = fit_task_scaler(&out.past.raw).unwrap();
        let mapped: Vec<f64> = out.past.raw.iter().map(|&s| sc.apply(s)).collect();
        let lo = mapped.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mapped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }
}
