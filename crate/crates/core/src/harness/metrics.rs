//! Per-interval training telemetry and its CSV form.
//!
//! Columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `env` | environment name |
//! | `seed` | training seed |
//! | `step` | global step count when the update ran |
//! | `update` | interval index `k` (0-based) |
//! | `r_train` | mean undiscounted return of episodes finished in the interval (empty if none) |
//! | `episodes` | number of episodes finished in the interval |
//! | `threshold` | exploration threshold the interval sampled under |
//! | `uncertainty` | ratio uncertainty level `U` the run was configured with |
//! | `ranking_len` | number of finite ratios collected in the interval |
//! | `low_count` | ratios strictly below `threshold` |
//! | `pu` | posterior ratio uncertainty `1 - low_count / ranking_len` (empty if no ratios) |
//! | `explore_fraction` | fraction of steps that sampled a fresh action |
//! | `log_std` | exploration log standard deviation used in the interval |
//! | `surrogate`, `value_loss`, `mean_ratio`, `clip_fraction` | update diagnostics |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env: String,
    pub seed: u64,
    pub step: u64,
    pub update: usize,
    pub r_train: Option<f64>,
    pub episodes: usize,
    pub threshold: f64,
    pub uncertainty: f64,
    pub ranking_len: usize,
    pub low_count: usize,
    pub pu: Option<f64>,
    pub explore_fraction: f64,
    pub log_std: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

pub const METRICS_HEADER: [&str; 17] = [
    "env",
    "seed",
    "step",
    "update",
    "r_train",
    "episodes",
    "threshold",
    "uncertainty",
    "ranking_len",
    "low_count",
    "pu",
    "explore_fraction",
    "log_std",
    "surrogate",
    "value_loss",
    "mean_ratio",
    "clip_fraction",
];

/// Writes rows with a header line; an empty slice still yields the header.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], header: &[&str], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(rows: &[MetricsRow], out: impl Write) -> Result<()> {
    write_csv(rows, &METRICS_HEADER, out)
}

pub fn save_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    write_metrics(rows, std::fs::File::create(path)?)
}

/// Parses rows, reporting the 1-based line of the first malformed record.
pub fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_reader(input);
    reader.headers()?;
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize().enumerate() {
        match record {
            Ok(row) => rows.push(row),
            Err(e) => {
                let row = e.position().map_or(i as u64 + 2, |p| p.line());
                return Err(Error::MalformedCsv {
                    row,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    read_csv(std::fs::File::open(path)?)
}
