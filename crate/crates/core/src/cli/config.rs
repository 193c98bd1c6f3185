//! Flat, re-loadable run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cad::{CadParams, FeatureWeighting};
use crate::data::{read_snapshot, Dataset, MixtureModel, Preset};
use crate::error::{io, Error, Result};
use crate::eval::{DataSource, ExperimentConfig, Method};
use crate::seed::derive_seed;
use crate::solver::SolverConfig;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SOFTHAD_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "softhad-out";

/// Every knob of a run. Serialized as flat TOML; the output directory is
/// read but never written back, so a persisted config hashes the same
/// wherever its outputs went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in mixture (`d1`, `d2`, `d3`); used when no other source is set.
    pub preset: String,
    /// Mixture description file, replacing the preset.
    pub mixture: Option<PathBuf>,
    /// Ordinal-response CSV.
    pub csv: Option<PathBuf>,
    pub response_column: Option<String>,
    /// Snapshot directory written by `gen`.
    pub data: Option<PathBuf>,

    pub n_per_class: usize,
    pub n_recent_per_class: usize,
    pub flip_rate: f64,

    /// Method of `score`.
    pub method: Method,
    /// Methods compared by `repeat` and `sweep`.
    pub methods: Vec<Method>,
    pub k: usize,
    pub sigma: Option<f64>,
    pub feature_weights: FeatureWeighting,
    pub c_l: f64,
    pub gamma_g: f64,
    pub tol: f64,
    pub k_per_class: Option<usize>,
    pub scaling: bool,

    pub seed: u64,
    pub runs: usize,

    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            preset: "d1".into(),
            mixture: None,
            csv: None,
            response_column: None,
            data: None,
            n_per_class: 500,
            n_recent_per_class: 500,
            flip_rate: 0.03,
            method: Method::SoftHad,
            methods: Method::ALL.to_vec(),
            k: 75,
            sigma: None,
            feature_weights: FeatureWeighting::Uniform,
            c_l: solver.c_l,
            gamma_g: solver.gamma_g,
            tol: solver.tol,
            k_per_class: None,
            scaling: true,
            seed: 0,
            runs: 10,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the serialized config, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            c_l: self.c_l,
            gamma_g: self.gamma_g,
            tol: self.tol,
            max_iter: None,
        }
    }

    /// Pipeline parameters; centroid sampling draws from its own stream.
    pub fn params(&self) -> CadParams {
        CadParams {
            k: self.k,
            solver: self.solver(),
            k_per_class: self.k_per_class,
            weighting: self.feature_weights,
            sigma: self.sigma,
            seed: derive_seed(self.seed, 4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        if !(0.0..1.0).contains(&self.flip_rate) {
            return Err(Error::InvalidParameter(format!(
                "flip_rate must lie in [0, 1), got {}",
                self.flip_rate
            )));
        }
        if self.csv.is_some() && self.response_column.is_none() {
            return Err(Error::InvalidParameter(
                "csv input needs response_column".into(),
            ));
        }
        if self.data.is_none() && self.csv.is_none() {
            if self.n_per_class == 0 {
                return Err(Error::InvalidParameter(
                    "n_per_class must be positive".into(),
                ));
            }
            if self.mixture.is_none() {
                self.preset.parse::<Preset>()?;
            }
        }
        Ok(())
    }

    /// Source that can be re-drawn per seed; snapshots cannot.
    pub fn source(&self) -> Result<DataSource> {
        if self.data.is_some() {
            return Err(Error::InvalidParameter(
                "a fixed snapshot cannot be re-drawn; use a preset, mixture or csv source".into(),
            ));
        }
        if let Some(path) = &self.csv {
            return Ok(DataSource::Ordinal {
                path: path.clone(),
                response_column: self.response_column.clone().unwrap_or_default(),
            });
        }
        let model = match &self.mixture {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
                MixtureModel::from_toml(&text)?
            }
            None => self.preset.parse::<Preset>()?.model(),
        };
        Ok(DataSource::Mixture(model))
    }

    pub fn source_name(&self) -> String {
        if let Some(p) = &self.data {
            format!("snapshot:{}", p.display())
        } else if let Some(p) = &self.csv {
            format!("csv:{}", p.display())
        } else if let Some(p) = &self.mixture {
            format!("mixture:{}", p.display())
        } else {
            format!("preset:{}", self.preset.to_ascii_lowercase())
        }
    }

    /// Past rows followed by recent rows, with roles.
    pub fn dataset(&self) -> Result<Dataset> {
        if let Some(dir) = &self.data {
            return read_snapshot(dir);
        }
        let (past, recent) = self.source()?.draw(
            self.n_per_class,
            self.n_recent_per_class,
            self.flip_rate,
            self.seed,
        )?;
        Dataset::concat_past_recent(&past, &recent)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            source: self.source()?,
            n_per_class: self.n_per_class,
            n_recent_per_class: self.n_recent_per_class,
            flip_rate: self.flip_rate,
            params: self.params(),
            methods: self.methods.clone(),
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_stable_hash() {
        let mut c = RunConfig {
            k_per_class: Some(100),
            sigma: Some(0.3),
            ..RunConfig::default()
        };
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let h = c.hash();
        assert_eq!(h.len(), 64);
        c.out_dir = Some("elsewhere".into());
        assert_eq!(c.hash(), h);
        c.seed = 1;
        assert_ne!(c.hash(), h);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("gamma = 2.0\n").is_err());
        let c: RunConfig = toml::from_str("gamma_g = 2.0\nmethod = \"wknn\"\n").unwrap();
        assert_eq!(c.gamma_g, 2.0);
        assert_eq!(c.method, Method::Wknn);
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig {
            preset: "d9".into(),
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            gamma_g: -1.0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
