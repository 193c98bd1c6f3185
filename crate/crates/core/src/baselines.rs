//! Reference detectors: neighborhood label averaging and Gaussian class
//! posteriors.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::cad::{build_cad_graph, AnomalyScores, CadParams};
use crate::data::mixture::logistic;
use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::label::{class_counts, Label};
use crate::matrix::{CsrMatrix, FeatureMatrix};
use crate::solver::TargetVector;

/// `l_i = sum_j w_ij y_j / sum_j w_ij` over off-diagonal entries, scored as
/// `|l_i - y_i|`.
pub fn weighted_knn_scores(weights: &CsrMatrix, y: &TargetVector) -> Result<AnomalyScores> {
    check_len(weights.n(), y.len())?;
    let t = y.as_slice();
    let raw = (0..weights.n())
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for (j, w) in weights.row(i) {
                if j != i {
                    num += w * t[j];
                    den += w;
                }
            }
            if den > 0.0 {
                Ok((num / den - t[i]).abs())
            } else {
                Err(Error::ZeroDegree(i))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(AnomalyScores::from_raw(raw))
}

/// Weighted k-NN on the graph the soft harmonic pipeline would use; centroid
/// neighbors count with their multiplicity. Returns scores of recent rows.
pub fn weighted_knn_recent(
    past: &Dataset,
    recent: &Dataset,
    params: &CadParams,
) -> Result<AnomalyScores> {
    let g = build_cad_graph(past, recent, params)?;
    let all = weighted_knn_scores(g.backbone.compact_weights(), &g.backbone.targets())?;
    Ok(AnomalyScores::from_raw(all.raw[g.n_centroids()..].to_vec()))
}

#[derive(Debug, Clone)]
struct ClassGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_prior: f64,
    log_norm: f64,
}

impl ClassGaussian {
    fn log_joint(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_row_slice(x) - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("factor has a positive diagonal");
        self.log_prior + self.log_norm - 0.5 * z.norm_squared()
    }
}

/// One Gaussian per class with empirical means, covariances and priors.
#[derive(Debug, Clone)]
pub struct GaussianClassModel {
    positive: ClassGaussian,
    negative: ClassGaussian,
}

impl GaussianClassModel {
    /// `lambda = None` adds `1e-6 * trace / d` to each class covariance.
    pub fn fit(x: &FeatureMatrix, labels: &[Label], lambda: Option<f64>) -> Result<Self> {
        check_len(x.n_rows(), labels.len())?;
        x.check_finite()?;
        if let Some(l) = lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "lambda must be non-negative, got {l}"
                )));
            }
        }
        let (np, nn) = class_counts(labels);
        if np == 0 || nn == 0 {
            return Err(Error::DegenerateLabels(
                "both classes are needed to fit class Gaussians".into(),
            ));
        }
        let n = labels.len() as f64;
        let fit_class = |label: Label| -> Result<ClassGaussian> {
            let rows: Vec<&[f64]> = x
                .rows()
                .zip(labels)
                .filter(|(_, &l)| l == label)
                .map(|(r, _)| r)
                .collect();
            let d = x.n_cols();
            let m = rows.len() as f64;
            let mut mean = DVector::zeros(d);
            for r in &rows {
                mean += DVector::from_row_slice(r);
            }
            mean /= m;
            let mut cov = DMatrix::zeros(d, d);
            for r in &rows {
                let c = DVector::from_row_slice(r) - &mean;
                cov += &c * c.transpose();
            }
            cov /= m;
            let lam = lambda.unwrap_or(1e-6 * cov.trace() / d as f64);
            for i in 0..d {
                cov[(i, i)] += lam;
            }
            let label_i8: i8 = label.into();
            let chol = Cholesky::new(cov.clone()).ok_or(Error::SingularCovariance {
                label: label_i8,
                lambda: lam,
            })?;
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            if !log_det.is_finite() {
                return Err(Error::SingularCovariance {
                    label: label_i8,
                    lambda: lam,
                });
            }
            Ok(ClassGaussian {
                mean,
                cov,
                chol,
                log_prior: (m / n).ln(),
                log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
            })
        };
        Ok(Self {
            positive: fit_class(Label::Positive)?,
            negative: fit_class(Label::Negative)?,
        })
    }

    fn class(&self, label: Label) -> &ClassGaussian {
        match label {
            Label::Positive => &self.positive,
            Label::Negative => &self.negative,
        }
    }

    pub fn mean(&self, label: Label) -> &[f64] {
        self.class(label).mean.as_slice()
    }

    pub fn covariance(&self, label: Label) -> &DMatrix<f64> {
        &self.class(label).cov
    }

    pub fn prior(&self, label: Label) -> f64 {
        self.class(label).log_prior.exp()
    }

    /// `P(y != observed | x)`.
    pub fn opposite_posterior(&self, x: &[f64], observed: Label) -> f64 {
        let own = self.class(observed).log_joint(x);
        let other = self.class(observed.flipped()).log_joint(x);
        logistic(other - own)
    }

    pub fn anomaly_scores(&self, x: &FeatureMatrix, labels: &[Label]) -> Result<AnomalyScores> {
        check_len(x.n_rows(), labels.len())?;
        check_len(self.positive.mean.len(), x.n_cols())?;
        x.check_finite()?;
        Ok(AnomalyScores::from_raw(
            x.rows()
                .zip(labels)
                .map(|(r, &l)| self.opposite_posterior(r, l))
                .collect(),
        ))
    }
}

/// Fits on `train` with the default regularizer and scores `eval`.
pub fn qda_scores(train: &Dataset, eval: &Dataset) -> Result<AnomalyScores> {
    GaussianClassModel::fit(&train.features, &train.labels, None)?
        .anomaly_scores(&eval.features, &eval.labels)
}
