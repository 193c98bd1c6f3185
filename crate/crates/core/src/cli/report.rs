use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

pub(crate) const REPORT_HEADER: &str = "instance_id,task,method,raw,scaled,rank";

pub const HISTOGRAM_BINS: usize = 50;
const HISTOGRAM_MAX: f64 = 2.0;

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportRow {
    pub instance_id: usize,
    pub task: String,
    pub method: String,
    pub raw: f64,
    pub scaled: Option<f64>,
    pub rank: usize,
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.display().to_string(),
        row: 0,
        column: String::new(),
        message: e.to_string(),
    })?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv {
            path: path.display().to_string(),
            row: 1,
            column: String::new(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != REPORT_HEADER {
        return Err(Error::Csv {
            path: path.display().to_string(),
            row: 1,
            column: String::new(),
            message: format!("expected header '{REPORT_HEADER}'"),
        });
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Csv {
                path: path.display().to_string(),
                row: i + 2,
                column: String::new(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub(crate) struct Group {
    pub method: String,
    pub task: String,
    pub rows: Vec<ReportRow>,
}

/// Rows grouped by (method, task), keeping first-appearance order.
pub(crate) fn group_rows(rows: Vec<ReportRow>) -> Vec<Group> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut map: BTreeMap<(String, String), Vec<ReportRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.task.clone());
        if !map.contains_key(&key) {
            order.push(key.clone());
        }
        map.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let rows = map.remove(&k).unwrap_or_default();
            Group {
                method: k.0,
                task: k.1,
                rows,
            }
        })
        .collect()
}

/// Fixed-width histogram of raw scores over [0, 2]; the right edge falls
/// into the last bin.
pub fn histogram(raw: &[f64]) -> String {
    let mut counts = [0usize; HISTOGRAM_BINS];
    let width = HISTOGRAM_MAX / HISTOGRAM_BINS as f64;
    for &s in raw {
        let b = ((s / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        counts[b] += 1;
    }
    let mut out = String::from("bin,lower,upper,count\n");
    for (i, c) in counts.iter().enumerate() {
        let lower = i as f64 * HISTOGRAM_MAX / HISTOGRAM_BINS as f64;
        let upper = (i + 1) as f64 * HISTOGRAM_MAX / HISTOGRAM_BINS as f64;
        let _ = writeln!(out, "{i},{lower},{upper},{c}");
    }
    out
}
