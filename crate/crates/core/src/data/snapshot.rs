//! Dataset snapshot: `features.csv` plus a `dataset.json` sidecar.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Role, Truth};
use crate::error::{check_len, io, Error, Result};
use crate::io::write_atomic;
use crate::label::Label;
use crate::matrix::FeatureMatrix;

pub const FEATURES_FILE: &str = "features.csv";
pub const SIDECAR_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub n: usize,
    pub dim: usize,
    pub labels: Vec<Label>,
    pub roles: Vec<Role>,
    pub truth: Option<Truth>,
    pub flipped: Vec<usize>,
}

fn features_csv(x: &FeatureMatrix) -> String {
    let mut s = (0..x.n_cols())
        .map(|j| format!("x{j}"))
        .collect::<Vec<_>>()
        .join(",");
    s.push('\n');
    for row in x.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_snapshot(dir: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let sidecar = DatasetSidecar {
        n: ds.len(),
        dim: ds.dim(),
        labels: ds.labels.clone(),
        roles: ds.roles.clone(),
        truth: ds.truth.clone(),
        flipped: ds.flipped.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    write_atomic(
        &dir.join(FEATURES_FILE),
        features_csv(&ds.features).as_bytes(),
    )?;
    write_atomic(&dir.join(SIDECAR_FILE), format!("{json}\n").as_bytes())
}

pub fn read_snapshot(dir: &Path) -> Result<Dataset> {
    let side_path = dir.join(SIDECAR_FILE);
    let text = std::fs::read_to_string(&side_path).map_err(|e| io(&side_path, e))?;
    let side: DatasetSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", side_path.display())))?;

    let feat_path = dir.join(FEATURES_FILE);
    let source = feat_path.display().to_string();
    let file = std::fs::File::open(&feat_path).map_err(|e| io(&feat_path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{source}: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    check_len(side.dim, headers.len())?;
    let mut data = Vec::with_capacity(side.n * side.dim);
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("{source}: {e}")))?;
        for (c, cell) in rec.iter().enumerate() {
            let v = cell.parse::<f64>().map_err(|_| Error::Csv {
                path: source.clone(),
                row: r + 2,
                column: headers.get(c).cloned().unwrap_or_default(),
                message: format!("non-numeric value '{cell}'"),
            })?;
            data.push(v);
        }
    }
    check_len(side.n * side.dim, data.len())?;
    let features = FeatureMatrix::new(side.n, side.dim, data)?;
    let ds = Dataset {
        features,
        labels: side.labels,
        truth: side.truth,
        roles: side.roles,
        flipped: side.flipped,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{flip_labels, sample_mixture, Preset};

    #[test]
    fn round_trip_is_exact() {
        let ds = sample_mixture(&Preset::D2.model(), 40, 8).unwrap();
        let mut ds = flip_labels(&ds, 0.05, 1).unwrap();
        ds.roles[3] = Role::Recent;
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(dir.path(), &ds).unwrap();
        assert_eq!(read_snapshot(dir.path()).unwrap(), ds);
    }

    #[test]
    fn rewriting_is_byte_identical() {
        let ds = sample_mixture(&Preset::D1.model(), 10, 2).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_snapshot(a.path(), &ds).unwrap();
        write_snapshot(b.path(), &ds).unwrap();
        for f in [FEATURES_FILE, SIDECAR_FILE] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
    }
}
