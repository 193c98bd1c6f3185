//! Numeric CSV with an ordinal response turned into a labeled dataset.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{flip_labels, Dataset, Role, Truth, TruthKind};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::matrix::FeatureMatrix;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalOptions {
    pub response_column: String,
    pub flip_rate: f64,
    /// Share of rows assigned to the past set.
    pub past_fraction: f64,
    pub seed: u64,
}

impl OrdinalOptions {
    pub fn new(response_column: impl Into<String>) -> Self {
        Self {
            response_column: response_column.into(),
            flip_rate: 0.0,
            past_fraction: 2.0 / 3.0,
            seed: 0,
        }
    }
}

pub fn load_ordinal_csv(path: &Path, opts: &OrdinalOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| crate::error::io(path, e))?;
    parse_ordinal_csv(file, &path.display().to_string(), opts)
}

/// Rows keep their input order; the past/recent split is recorded in `roles`.
/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn parse_ordinal_csv<R: Read>(
    input: R,
    source: &str,
    opts: &OrdinalOptions,
) -> Result<Dataset> {
    if !(0.0..1.0).contains(&opts.past_fraction) || opts.past_fraction == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "past fraction must lie in (0, 1), got {}",
            opts.past_fraction
        )));
    }
    let csv_err = |row: usize, column: &str, message: String| Error::Csv {
        path: source.to_string(),
        row,
        column: column.to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(1, "", e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let response = headers
        .iter()
        .position(|h| *h == opts.response_column)
        .ok_or_else(|| csv_err(1, &opts.response_column, "response column not found".into()))?;
    if headers.len() < 2 {
        return Err(csv_err(
            1,
            "",
            "no feature columns besides the response".into(),
        ));
    }

    let mut features = Vec::new();
    let mut raw_response = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| csv_err(line, "", e.to_string()))?;
        if record.len() != headers.len() {
            return Err(csv_err(
                line,
                "",
                format!("expected {} cells, found {}", headers.len(), record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(csv_err(line, &headers[c], "missing value".into()));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_err(line, &headers[c], format!("non-numeric value '{cell}'")))?;
            if !v.is_finite() {
                return Err(csv_err(
                    line,
                    &headers[c],
                    format!("non-finite value '{cell}'"),
                ));
            }
            if c == response {
                raw_response.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let n = raw_response.len();
    if n < 2 {
        return Err(csv_err(
            1,
            "",
            format!("need at least 2 data rows, found {n}"),
        ));
    }
    let lo = raw_response.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw_response
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::DegenerateLabels(format!(
            "response column '{}' is constant",
            opts.response_column
        )));
    }
    let scaled: Vec<f64> = raw_response
        .iter()
        .map(|v| (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
        .collect();
    let labels: Vec<Label> = scaled
        .iter()
        .map(|&s| {
            if s >= 0.0 {
                Label::Positive
            } else {
                Label::Negative
            }
        })
        .collect();
    let scores = scaled
        .iter()
        .zip(&labels)
        .map(|(s, l)| (s - l.sign()).abs())
        .collect();

    let x = FeatureMatrix::new(n, headers.len() - 1, features)?;
    let ds = Dataset::new(x, labels)?.with_truth(Truth {
        kind: TruthKind::OrdinalResponse,
        scores,
    })?;
    let mut ds = flip_labels(&ds, opts.flip_rate, derive_seed(opts.seed, 0))?;

    let n_past = ((opts.past_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 1));
    for i in rand::seq::index::sample(&mut rng, n, n - n_past) {
        ds.roles[i] = Role::Recent;
    }
    Ok(ds)
}
