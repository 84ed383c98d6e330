//! Ratio-uncertainty sensitivity sweep over (U, seed) cells.

use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::evaluate::{evaluate, mean_std};
use super::metrics::{save_metrics, write_csv, MetricsRow};
use super::train::train;
use crate::error::{Error, Result};

/// Column label of a scheme: `PPO` for `U = 1`, `PPO-UE_<U>` otherwise.
pub fn scheme_name(uncertainty: f64) -> String {
    if uncertainty >= 1.0 {
        "PPO".to_string()
    } else {
        format!("PPO-UE_{uncertainty}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub env: String,
    pub scheme: String,
    pub uncertainty: f64,
    pub seed: u64,
    pub ok: bool,
    pub r_test_mean: Option<f64>,
    pub r_test_std: Option<f64>,
    pub final_r_train: Option<f64>,
    pub mean_pu: Option<f64>,
    pub mean_explore: Option<f64>,
    pub error: Option<String>,
}

pub const CELL_HEADER: [&str; 11] = [
    "env",
    "scheme",
    "uncertainty",
    "seed",
    "ok",
    "r_test_mean",
    "r_test_std",
    "final_r_train",
    "mean_pu",
    "mean_explore",
    "error",
];

/// Aggregate over seeds for one uncertainty level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub env: String,
    pub scheme: String,
    pub uncertainty: f64,
    pub runs: usize,
    pub failed: usize,
    pub r_test_mean: Option<f64>,
    pub r_test_std: Option<f64>,
    pub final_r_train_mean: Option<f64>,
    pub pu_mean: Option<f64>,
    pub explore_mean: Option<f64>,
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "env",
    "scheme",
    "uncertainty",
    "runs",
    "failed",
    "r_test_mean",
    "r_test_std",
    "final_r_train_mean",
    "pu_mean",
    "explore_mean",
];

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub summary: Vec<SchemeSummary>,
    pub rows: Vec<MetricsRow>,
    pub checkpoints: Vec<Option<Checkpoint>>,
}

impl SweepResult {
    pub fn scheme(&self, uncertainty: f64) -> Option<&SchemeSummary> {
        self.summary.iter().find(|s| s.uncertainty == uncertainty)
    }

    /// Spearman correlation between `U` and mean posterior uncertainty.
    pub fn pu_spearman(&self) -> Option<f64> {
        let (us, pus): (Vec<f64>, Vec<f64>) = self
            .summary
            .iter()
            .filter_map(|s| s.pu_mean.map(|p| (s.uncertainty, p)))
            .unzip();
        spearman(&us, &pus)
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn run_cell(base: &ExperimentConfig, uncertainty: f64, seed: u64) -> (CellResult, Vec<MetricsRow>, Option<Checkpoint>) {
    let cfg = ExperimentConfig {
        uncertainty,
        ..base.clone()
    };
    let mut cell = CellResult {
        env: cfg.env.name().into(),
        scheme: scheme_name(uncertainty),
        uncertainty,
        seed,
        ok: false,
        r_test_mean: None,
        r_test_std: None,
        final_r_train: None,
        mean_pu: None,
        mean_explore: None,
        error: None,
    };
    let (rows, checkpoint) = match train(&cfg, seed) {
        Ok(out) => (out.rows, Some(out.checkpoint)),
        Err(fault) => {
            warn!("{} seed {seed}: {fault}", cell.scheme);
            cell.error = Some(fault.to_string());
            (fault.rows, None)
        }
    };
    cell.final_r_train = rows.iter().rev().find_map(|r| r.r_train);
    cell.mean_pu = mean_of(rows.iter().filter_map(|r| r.pu));
    cell.mean_explore = mean_of(rows.iter().map(|r| r.explore_fraction));
    if let Some(ckpt) = &checkpoint {
        match evaluate(ckpt, cfg.env, cfg.test_horizon, cfg.eval_episodes, seed) {
            Ok(report) => {
                cell.ok = true;
                cell.r_test_mean = Some(report.mean);
                cell.r_test_std = Some(report.std);
            }
            Err(e) => cell.error = Some(e.to_string()),
        }
    }
    (cell, rows, checkpoint)
}

/// Trains and evaluates every (U, seed) pair of `base` and aggregates per U.
///
/// Cells run in parallel; results are ordered by U then seed regardless of
/// scheduling. A failed cell is reported and excluded from the aggregates.
pub fn sweep(base: &ExperimentConfig, uncertainties: &[f64], seeds: &[u64]) -> Result<SweepResult> {
    if uncertainties.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one U and one seed".into()));
    }
    let probe = ExperimentConfig {
        seeds: seeds.to_vec(),
        ..base.clone()
    };
    probe.validate()?;
    for &u in uncertainties {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Config(format!("uncertainty {u} outside [0, 1]")));
        }
    }
    let jobs: Vec<(f64, u64)> = uncertainties
        .iter()
        .flat_map(|&u| seeds.iter().map(move |&s| (u, s)))
        .collect();
    let results: Vec<_> = jobs.par_iter().map(|&(u, s)| run_cell(&probe, u, s)).collect();

    let mut cells = Vec::with_capacity(results.len());
    let mut rows = Vec::new();
    let mut checkpoints = Vec::with_capacity(results.len());
    for (cell, cell_rows, ckpt) in results {
        cells.push(cell);
        rows.extend(cell_rows);
        checkpoints.push(ckpt);
    }
    let summary = uncertainties
        .iter()
        .map(|&u| summarize(&probe, u, cells.iter().filter(|c| c.uncertainty == u)))
        .collect();
    Ok(SweepResult {
        cells,
        summary,
        rows,
        checkpoints,
    })
}

fn summarize<'a>(
    cfg: &ExperimentConfig,
    uncertainty: f64,
    cells: impl Iterator<Item = &'a CellResult>,
) -> SchemeSummary {
    let cells: Vec<&CellResult> = cells.collect();
    let ok: Vec<&&CellResult> = cells.iter().filter(|c| c.ok).collect();
    let r_tests: Vec<f64> = ok.iter().filter_map(|c| c.r_test_mean).collect();
    let (r_mean, r_std) = mean_std(&r_tests);
    SchemeSummary {
        env: cfg.env.name().into(),
        scheme: scheme_name(uncertainty),
        uncertainty,
        runs: cells.len(),
        failed: cells.len() - ok.len(),
        r_test_mean: (!r_tests.is_empty()).then_some(r_mean),
        r_test_std: (!r_tests.is_empty()).then_some(r_std),
        final_r_train_mean: mean_of(ok.iter().filter_map(|c| c.final_r_train)),
        pu_mean: mean_of(ok.iter().filter_map(|c| c.mean_pu)),
        explore_mean: mean_of(ok.iter().filter_map(|c| c.mean_explore)),
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` with fewer than two points or a
/// constant input.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CELLS_FILE: &str = "cells.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Writes `metrics.csv`, `cells.csv` and `summary.csv` into `dir`.
pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let metrics = dir.join(METRICS_FILE);
    save_metrics(&result.rows, &metrics)?;
    let cells = dir.join(CELLS_FILE);
    write_csv(&result.cells, &CELL_HEADER, std::fs::File::create(&cells)?)?;
    let summary = dir.join(SUMMARY_FILE);
    write_csv(&result.summary, &SUMMARY_HEADER, std::fs::File::create(&summary)?)?;
    Ok(vec![metrics, cells, summary])
}
