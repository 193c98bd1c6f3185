//! Repeated generate, flip, score and evaluate runs.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{agreement_score, Summary};
use crate::baselines::{qda_scores, weighted_knn_recent, weighted_knn_scores, GaussianClassModel};
use crate::cad::{build_cad_graph, score_recent, AnomalyScores, CadParams};
use crate::data::{
    flip_labels, load_ordinal_csv, sample_mixture, Dataset, MixtureModel, OrdinalOptions,
};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    SoftHad,
    Wknn,
    Qda,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SoftHad, Method::Wknn, Method::Qda];

    pub fn name(self) -> &'static str {
        match self {
            Method::SoftHad => "softhad",
            Method::Wknn => "wknn",
            Method::Qda => "qda",
        }
    }

    /// Scores the recent rows against the past rows.
    pub fn score(
        self,
        past: &Dataset,
        recent: &Dataset,
        params: &CadParams,
    ) -> Result<AnomalyScores> {
        match self {
            Method::SoftHad => score_recent(past, recent, params).map(|o| o.recent),
            Method::Wknn => weighted_knn_recent(past, recent, params),
            Method::Qda => qda_scores(past, recent),
        }
    }

    /// Training-side scores (one per graph centroid for the graph methods,
    /// one per past row for QDA) and recent scores.
    pub fn score_with_training(
        self,
        past: &Dataset,
        recent: &Dataset,
        params: &CadParams,
    ) -> Result<(AnomalyScores, AnomalyScores)> {
        match self {
            Method::SoftHad => score_recent(past, recent, params).map(|o| (o.past, o.recent)),
            Method::Wknn => {
                let g = build_cad_graph(past, recent, params)?;
                let all = weighted_knn_scores(g.backbone.compact_weights(), &g.backbone.targets())?;
                let (a, b) = all.raw.split_at(g.n_centroids());
                Ok((
                    AnomalyScores::from_raw(a.to_vec()),
                    AnomalyScores::from_raw(b.to_vec()),
                ))
            }
            Method::Qda => {
                let m = GaussianClassModel::fit(&past.features, &past.labels, None)?;
                Ok((
                    m.anomaly_scores(&past.features, &past.labels)?,
                    m.anomaly_scores(&recent.features, &recent.labels)?,
                ))
            }
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softhad" => Ok(Method::SoftHad),
            "wknn" => Ok(Method::Wknn),
            "qda" => Ok(Method::Qda),
            _ => Err(Error::Parse(format!("unknown method '{s}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Mixture(MixtureModel),
    /// Each run re-flips and re-splits the file under its own seed.
    Ordinal {
        path: PathBuf,
        response_column: String,
    },
}

impl DataSource {
    /// Past and recent sets for one run.
    pub fn draw(
        &self,
        n_per_class: usize,
        n_recent_per_class: usize,
        flip_rate: f64,
        seed: u64,
    ) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Mixture(m) => {
                let past = sample_mixture(m, n_per_class, derive_seed(seed, 0))?;
                let past = flip_labels(&past, flip_rate, derive_seed(seed, 1))?;
                let recent = sample_mixture(m, n_recent_per_class, derive_seed(seed, 2))?;
                let recent = flip_labels(&recent, flip_rate, derive_seed(seed, 3))?;
                Ok((past, recent))
            }
            DataSource::Ordinal {
                path,
                response_column,
            } => {
                let mut opts = OrdinalOptions::new(response_column.clone());
                opts.flip_rate = flip_rate;
                opts.seed = seed;
                let ds = load_ordinal_csv(path, &opts)?;
                Ok((ds.past(), ds.recent()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub n_per_class: usize,
    pub n_recent_per_class: usize,
    pub flip_rate: f64,
    pub params: CadParams,
    pub methods: Vec<Method>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(source: DataSource) -> Self {
        Self {
            source,
            n_per_class: 500,
            n_recent_per_class: 500,
            flip_rate: 0.03,
            params: CadParams::default(),
            methods: Method::ALL.to_vec(),
            seed: 0,
        }
    }

    /// Seed of run `r`.
    pub fn run_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, r as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub method: Method,
    pub agreement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<RunRecord>,
}

pub const TABLE_HEADER: &str = "method,runs,mean,variance";

impl ExperimentTable {
    pub fn summary(&self, method: Method) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|s| s.method == method)
            .map(|s| &s.summary)
    }

    /// `method,runs,mean,variance`, one row per method.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{TABLE_HEADER}\n");
        for m in &self.summaries {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                m.method, m.summary.runs, m.summary.mean, m.summary.variance
            );
        }
        s
    }
}

/// One run: draw data under `seed`, score recent rows with every method and
/// compare against the true scores.
pub fn run_once(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<(Method, f64)>> {
    let (past, recent) =
        cfg.source
            .draw(cfg.n_per_class, cfg.n_recent_per_class, cfg.flip_rate, seed)?;
    let truth = recent
        .true_scores()
        .ok_or_else(|| Error::InvalidParameter("recent set has no true scores".into()))?;
    let params = CadParams {
        seed: derive_seed(seed, 4),
        ..cfg.params.clone()
    };
    cfg.methods
        .iter()
        .map(|&m| {
            let s = m.score(&past, &recent, &params)?;
            Ok((m, agreement_score(&s.raw, truth)?.score))
        })
        .collect()
}

/// Runs with the given seeds concurrently and summarizes per method.
pub fn repeat_with_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<ExperimentTable> {
    if seeds.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "at least 2 runs are needed, got {}",
            seeds.len()
        )));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidParameter("no methods selected".into()));
    }
    let per_run: Vec<Vec<(Method, f64)>> = seeds
        .par_iter()
        .map(|&seed| {
            run_once(cfg, seed).map_err(|e| Error::RunFailed {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for (run, (results, &seed)) in per_run.iter().zip(seeds).enumerate() {
        for &(method, agreement) in results {
            records.push(RunRecord {
                run,
                seed,
                method,
                agreement,
            });
        }
    }
    let summaries = cfg
        .methods
        .iter()
        .map(|&method| {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.method == method)
                .map(|r| r.agreement)
                .collect();
            MethodSummary {
                method,
                summary: Summary::from_values(&values),
            }
        })
        .collect();
    Ok(ExperimentTable { summaries, records })
}

/// `runs` repetitions with seeds derived from `cfg.seed`.
pub fn repeat_experiment(cfg: &ExperimentConfig, runs: usize) -> Result<ExperimentTable> {
    let seeds: Vec<u64> = (0..runs).map(|r| cfg.run_seed(r)).collect();
    repeat_with_seeds(cfg, &seeds)
}
