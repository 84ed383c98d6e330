//! Diagonal Gaussian action distribution around the actor mean.
//!
//! `variance[i]` is the diagonal entry of the covariance, so the standard
//! deviation is its square root and the annealed schedule below governs the
//! log of that square root.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::DenseNet;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Empty("gaussian mean"));
        }
        check_dim("gaussian variance", mean.len(), variance.len())?;
        if let Some(bad) = variance.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "variance entries must be positive and finite, got {bad}"
            )));
        }
        Ok(Self { mean, variance })
    }

    /// Same log standard deviation on every dimension.
    pub fn isotropic(mean: Vec<f64>, log_std: f64) -> Result<Self> {
        let variance = vec![(2.0 * log_std).exp(); mean.len()];
        Self::new(mean, variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    /// Squared Mahalanobis distance of `a` from the distribution.
    pub fn mahalanobis_sq(&self, a: &[f64]) -> Result<f64> {
        check_dim("mahalanobis action", self.dim(), a.len())?;
        Ok(a.iter()
            .zip(&self.mean)
            .zip(&self.variance)
            .map(|((a, m), v)| (a - m) * (a - m) / v)
            .sum())
    }

    /// `-1/2 (d log 2pi + sum_i (log var_i + (a_i - mu_i)^2 / var_i))`
    pub fn log_prob(&self, a: &[f64]) -> Result<f64> {
        check_dim("log_prob action", self.dim(), a.len())?;
        let mut acc = self.dim() as f64 * LN_2PI;
        for ((a, m), v) in a.iter().zip(&self.mean).zip(&self.variance) {
            acc += v.ln() + (a - m) * (a - m) / v;
        }
        Ok(-0.5 * acc)
    }

    /// `d log_prob / d mean`, i.e. `(a - mu) / var` per dimension.
    pub fn grad_log_prob_mean(&self, a: &[f64]) -> Result<Vec<f64>> {
        check_dim("grad_log_prob action", self.dim(), a.len())?;
        Ok(a.iter()
            .zip(&self.mean)
            .zip(&self.variance)
            .map(|((a, m), v)| (a - m) / v)
            .collect())
    }

    /// Draws `mu_i + sqrt(var_i) z_i`, consuming exactly `dim` normals.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }
}

/// Density through the full-covariance formula with `Sigma = diag(variance)`.
/// Kept independent of [`DiagonalGaussian::log_prob`] for cross-checking.
pub fn density_full_form(dist: &DiagonalGaussian, a: &[f64]) -> Result<f64> {
    let d = dist.dim() as f64;
    let det: f64 = dist.variance().iter().product();
    let quad = dist.mahalanobis_sq(a)?;
    Ok((-0.5 * quad).exp() / ((2.0 * PI).powf(d) * det).sqrt())
}

/// Largest relative disagreement between the analytic mean gradient of
/// `log_prob` and central finite differences.
pub fn log_prob_grad_check(dist: &DiagonalGaussian, a: &[f64]) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let analytic = dist.grad_log_prob_mean(a)?;
    let mut worst: f64 = 0.0;
    for (i, g) in analytic.iter().enumerate() {
        let shifted = |delta: f64| {
            let mut mean = dist.mean().to_vec();
            mean[i] += delta;
            DiagonalGaussian::new(mean, dist.variance().to_vec())?.log_prob(a)
        };
        let fd = (shifted(STEP)? - shifted(-STEP)?) / (2.0 * STEP);
        let err = (fd - g).abs() / g.abs().max(fd.abs()).max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Linear annealing of the log standard deviation over training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub start_log_std: f64,
    pub end_log_std: f64,
    pub total_steps: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            start_log_std: -0.1,
            end_log_std: -1.6,
            total_steps: 1_000_000,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("anneal total_steps must be positive".into()));
        }
        if !(self.start_log_std.is_finite() && self.end_log_std.is_finite()) {
            return Err(Error::Config("anneal endpoints must be finite".into()));
        }
        Ok(())
    }

    /// Clamps `step` to `total_steps`.
    pub fn log_std_at(&self, step: u64) -> f64 {
        let frac = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.start_log_std + (self.end_log_std - self.start_log_std) * frac
    }
}

/// Frozen copy of the actor from an earlier update.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    actor: DenseNet,
    update_index: usize,
}

impl PolicySnapshot {
    pub fn capture(actor: &DenseNet, update_index: usize) -> Self {
        Self {
            actor: actor.clone(),
            update_index,
        }
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn update_index(&self) -> usize {
        self.update_index
    }
}

/// The deterministic policy mean for state `s`.
pub fn mean_action(actor: &DenseNet, s: &[f64]) -> Result<Vec<f64>> {
    actor.forward(s)
}
