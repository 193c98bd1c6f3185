//! Labeled datasets with optional ground-truth anomaly scores.

pub(crate) mod mixture;
mod ordinal;
mod snapshot;

pub use mixture::{
    presets_d1_d2_d3, sample_mixture, true_anomaly_score, ClassMixture, Component, MixtureModel,
    Preset,
};
pub use ordinal::{load_ordinal_csv, parse_ordinal_csv, OrdinalOptions};
pub use snapshot::{read_snapshot, write_snapshot, DatasetSidecar, FEATURES_FILE, SIDECAR_FILE};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::label::Label;
use crate::matrix::FeatureMatrix;

/// Whether an instance belongs to the reference history or is to be scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Past,
    Recent,
}

/// How true anomaly scores were defined; determines their complement under a
/// label flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthKind {
    /// `P(y != y_i | x_i)` under a known generative model, in `[0, 1]`.
    Posterior,
    /// `|y_r - y_i|` for a response scaled to `[-1, 1]`, in `[0, 2]`.
    OrdinalResponse,
}

impl TruthKind {
    /// Score of an instance plus the score it would have with the other label.
    pub fn total(self) -> f64 {
        match self {
            TruthKind::Posterior => 1.0,
            TruthKind::OrdinalResponse => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub kind: TruthKind,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub labels: Vec<Label>,
    pub truth: Option<Truth>,
    pub roles: Vec<Role>,
    /// Rows whose label was switched by [`flip_labels`], ascending.
    pub flipped: Vec<usize>,
}

impl Dataset {
    /// All rows start out as past examples.
    pub fn new(features: FeatureMatrix, labels: Vec<Label>) -> Result<Self> {
        check_len(features.n_rows(), labels.len())?;
        let n = labels.len();
        Ok(Self {
            features,
            labels,
            truth: None,
            roles: vec![Role::Past; n],
            flipped: Vec::new(),
        })
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        check_len(self.len(), truth.scores.len())?;
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.roles = vec![role; self.len()];
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.n_cols()
    }

    pub fn validate(&self) -> Result<()> {
        check_len(self.features.n_rows(), self.labels.len())?;
        check_len(self.len(), self.roles.len())?;
        if let Some(t) = &self.truth {
            check_len(self.len(), t.scores.len())?;
            let hi = t.kind.total();
            if let Some(bad) = t.scores.iter().find(|s| !(0.0..=hi).contains(*s)) {
                return Err(Error::InvalidParameter(format!(
                    "true score {bad} outside [0, {hi}]"
                )));
            }
        }
        if let Some(&bad) = self.flipped.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidParameter(format!(
                "flipped index {bad} out of range"
            )));
        }
        Ok(())
    }

    pub fn indices_with_role(&self, role: Role) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] == role).collect()
    }

    /// Rows `idx` in the given order; flip records are re-indexed.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.len()];
        for (p, &i) in idx.iter().enumerate() {
            pos[i] = p;
        }
        let mut flipped: Vec<usize> = self
            .flipped
            .iter()
            .filter_map(|&i| (pos[i] != usize::MAX).then_some(pos[i]))
            .collect();
        flipped.sort_unstable();
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            truth: self.truth.as_ref().map(|t| Truth {
                kind: t.kind,
                scores: idx.iter().map(|&i| t.scores[i]).collect(),
            }),
            roles: idx.iter().map(|&i| self.roles[i]).collect(),
            flipped,
        }
    }

    pub fn past(&self) -> Self {
        self.subset(&self.indices_with_role(Role::Past))
    }

    pub fn recent(&self) -> Self {
        self.subset(&self.indices_with_role(Role::Recent))
    }

    /// Past rows followed by recent rows, with roles set accordingly.
    pub fn concat_past_recent(past: &Self, recent: &Self) -> Result<Self> {
        let features = past.features.vstack(&recent.features)?;
        let mut labels = past.labels.clone();
        labels.extend_from_slice(&recent.labels);
        let truth = match (&past.truth, &recent.truth) {
            (Some(a), Some(b)) if a.kind == b.kind => Some(Truth {
                kind: a.kind,
                scores: a.scores.iter().chain(&b.scores).copied().collect(),
            }),
            (None, None) => None,
            _ => {
                return Err(Error::InvalidParameter(
                    "past and recent sets carry incompatible truth".into(),
                ))
            }
        };
        let mut roles = vec![Role::Past; past.len()];
        roles.extend(std::iter::repeat_n(Role::Recent, recent.len()));
        let mut flipped = past.flipped.clone();
        flipped.extend(recent.flipped.iter().map(|i| i + past.len()));
        Ok(Self {
            features,
            labels,
            truth,
            roles,
            flipped,
        })
    }

    pub fn true_scores(&self) -> Option<&[f64]> {
        self.truth.as_ref().map(|t| t.scores.as_slice())
    }
}

/// Switches the labels of exactly `round(rate * n)` rows drawn uniformly
/// without replacement. True scores move to their complement.
pub fn flip_labels(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!(
            "flip rate must lie in [0, 1), got {rate}"
        )));
    }
    let n = ds.len();
    let count = (rate * n as f64).round() as usize;
    let mut out = ds.clone();
    if count == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    for &i in &chosen {
        out.labels[i] = out.labels[i].flipped();
        if let Some(t) = out.truth.as_mut() {
            t.scores[i] = t.kind.total() - t.scores[i];
        }
    }
    // flipping an already flipped row restores it
    let mut record: Vec<usize> = ds
        .flipped
        .iter()
        .copied()
        .filter(|i| chosen.binary_search(i).is_err())
        .chain(
            chosen
                .iter()
                .copied()
                .filter(|i| ds.flipped.binary_search(i).is_err()),
        )
        .collect();
    record.sort_unstable();
    out.flipped = record;
    Ok(out)
}
