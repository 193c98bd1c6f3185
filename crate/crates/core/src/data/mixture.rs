//! Class-conditional Gaussian mixtures with exact posteriors.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Truth, TruthKind};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::matrix::FeatureMatrix;

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMixture {
    pub prior: f64,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub positive: ClassMixture,
    pub negative: ClassMixture,
}

/// Gaussian with a cached Cholesky factor and log normalizer.
#[derive(Debug, Clone)]
struct Prepared {
    log_weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl Prepared {
    fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_row_slice(x) - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `1 / (1 + exp(-t))` without overflow.
pub(crate) fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl ClassMixture {
    fn prepare(&self, dim: usize, label: Label) -> Result<Vec<Prepared>> {
        if self.components.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "class {label} has no mixture components"
            )));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL || self.components.iter().any(|c| !(c.weight > 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "class {label} component weights must be positive and sum to 1 (got {total})"
            )));
        }
        self.components
            .iter()
            .map(|c| {
                if c.mean.len() != dim || c.cov.len() != dim || c.cov.iter().any(|r| r.len() != dim)
                {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: c.mean.len(),
                    });
                }
                let cov = DMatrix::from_fn(dim, dim, |i, j| c.cov[i][j]);
                if cov != cov.transpose() {
                    return Err(Error::InvalidParameter(format!(
                        "class {label} covariance is not symmetric"
                    )));
                }
                let chol = Cholesky::new(cov).ok_or(Error::NotPositiveDefinite)?;
                let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
                Ok(Prepared {
                    log_weight: c.weight.ln(),
                    mean: DVector::from_row_slice(&c.mean),
                    chol,
                    log_norm: -0.5 * (dim as f64 * (2.0 * PI).ln() + log_det),
                })
            })
            .collect()
    }
}

/// Validated model ready for sampling and posterior evaluation.
#[derive(Debug, Clone)]
struct PreparedModel {
    dim: usize,
    positive: (f64, Vec<Prepared>),
    negative: (f64, Vec<Prepared>),
}

impl PreparedModel {
    fn class(&self, label: Label) -> &(f64, Vec<Prepared>) {
        match label {
            Label::Positive => &self.positive,
            Label::Negative => &self.negative,
        }
    }

    /// `log pi_y + log p(x | y)`.
    fn log_joint(&self, x: &[f64], label: Label) -> f64 {
        let (prior, comps) = self.class(label);
        prior.ln() + log_sum_exp(comps.iter().map(|c| c.log_weight + c.log_density(x)))
    }

    fn anomaly(&self, x: &[f64], observed: Label) -> f64 {
        let own = self.log_joint(x, observed);
        let other = self.log_joint(x, observed.flipped());
        logistic(other - own)
    }
}

impl MixtureModel {
    pub fn dim(&self) -> usize {
        self.positive.components.first().map_or(0, |c| c.mean.len())
    }

    fn prepare(&self) -> Result<PreparedModel> {
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::InvalidParameter("mixture has zero dimension".into()));
        }
        let (pp, pn) = (self.positive.prior, self.negative.prior);
        if !(pp > 0.0 && pn > 0.0) || (pp + pn - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParameter(format!(
                "class priors must be positive and sum to 1 (got {pp} + {pn})"
            )));
        }
        Ok(PreparedModel {
            dim,
            positive: (pp, self.positive.prepare(dim, Label::Positive)?),
            negative: (pn, self.negative.prepare(dim, Label::Negative)?),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.prepare().map(|_| ())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("mixture serializes")
    }

    /// Exact `P(y != observed | x)` for a batch of rows.
    pub fn anomaly_scores(&self, x: &FeatureMatrix, labels: &[Label]) -> Result<Vec<f64>> {
        let m = self.prepare()?;
        crate::error::check_len(m.dim, x.n_cols())?;
        crate::error::check_len(x.n_rows(), labels.len())?;
        Ok(x.rows()
            .zip(labels)
            .map(|(r, &l)| m.anomaly(r, l))
            .collect())
    }
}

/// `P(y != y_observed | x)` under the model, evaluated in log space.
pub fn true_anomaly_score(model: &MixtureModel, x: &[f64], observed: Label) -> Result<f64> {
    let m = model.prepare()?;
    crate::error::check_len(m.dim, x.len())?;
    Ok(m.anomaly(x, observed))
}

/// Draws `n_per_class` rows from each class (positives first) with exact
/// posterior truth for the drawn labels. All rows are marked past.
pub fn sample_mixture(model: &MixtureModel, n_per_class: usize, seed: u64) -> Result<Dataset> {
    let m = model.prepare()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n_per_class * m.dim);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for label in Label::BOTH {
        let (_, comps) = m.class(label);
        let weights: Vec<f64> = comps.iter().map(|c| c.log_weight.exp()).collect();
        for _ in 0..n_per_class {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = comps.len() - 1;
            for (c, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = c;
                    break;
                }
            }
            let comp = &comps[pick];
            let z = DVector::from_iterator(
                m.dim,
                (0..m.dim).map(|_| rng.sample::<f64, _>(StandardNormal)),
            );
            let x = &comp.mean + comp.chol.l_dirty().lower_triangle() * z;
            data.extend(x.iter());
            labels.push(label);
        }
    }
    let features = FeatureMatrix::new(labels.len(), m.dim, data)?;
    let scores = features
        .rows()
        .zip(&labels)
        .map(|(r, &l)| m.anomaly(r, l))
        .collect();
    Dataset::new(features, labels)?.with_truth(Truth {
        kind: TruthKind::Posterior,
        scores,
    })
}

/// Built-in two-dimensional synthetic benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// XOR-like: two diagonal blobs against one elongated anti-diagonal Gaussian.
    D1,
    /// Two overlapping pairs of blobs.
    D2,
    /// Ring of eight blobs around a central blob of the other class.
    D3,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::D1, Preset::D2, Preset::D3];

    pub fn name(self) -> &'static str {
        match self {
            Preset::D1 => "d1",
            Preset::D2 => "d2",
            Preset::D3 => "d3",
        }
    }

    /// Shipped configuration text.
    pub fn config(self) -> &'static str {
        match self {
            Preset::D1 => include_str!("../../presets/d1.toml"),
            Preset::D2 => include_str!("../../presets/d2.toml"),
            Preset::D3 => include_str!("../../presets/d3.toml"),
        }
    }

    pub fn model(self) -> MixtureModel {
        MixtureModel::from_toml(self.config()).expect("shipped presets are valid")
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(Preset::D1),
            "d2" => Ok(Preset::D2),
            "d3" => Ok(Preset::D3),
            other => Err(Error::Parse(format!("unknown preset '{other}'"))),
        }
    }
}

pub fn presets_d1_d2_d3() -> (MixtureModel, MixtureModel, MixtureModel) {
    (Preset::D1.model(), Preset::D2.model(), Preset::D3.model())
}
