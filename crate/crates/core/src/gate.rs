//! Uncertainty-aware exploration gate.
//!
//! Each visited state gets an action distance ratio: how far the live
//! actor's mean action moved relative to the previous policy snapshot's.
//! Ratios from one update interval are ranked to pick the exploration
//! threshold for the next interval. States whose ratio exceeds the
//! threshold sample a fresh Gaussian action; the rest take the policy mean.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::DenseNet;
use crate::policy::{mean_action, PolicySnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Ratio uncertainty level applied from the first update on.
    pub uncertainty: f64,
    /// Ratio uncertainty level of interval 0.
    pub initial_uncertainty: f64,
    /// Exploration threshold in force until a ranking exists.
    pub initial_threshold: f64,
    /// Floor on `|a_prev|` in the ratio denominator.
    pub denom_guard: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            uncertainty: 1.0,
            initial_uncertainty: 1.0,
            initial_threshold: 0.0,
            denom_guard: 1e-8,
        }
    }
}

impl GateConfig {
    pub fn with_uncertainty(uncertainty: f64) -> Self {
        Self {
            uncertainty,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, u) in [
            ("uncertainty", self.uncertainty),
            ("initial_uncertainty", self.initial_uncertainty),
        ] {
            if !(0.0..=1.0).contains(&u) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {u}")));
            }
        }
        if self.initial_threshold.is_nan() || self.initial_threshold < 0.0 {
            return Err(Error::Config("initial_threshold must be nonnegative".into()));
        }
        if self.denom_guard.is_nan() || self.denom_guard <= 0.0 {
            return Err(Error::Config("denom_guard must be positive".into()));
        }
        Ok(())
    }

    /// Uncertainty level for update interval `k`.
    pub fn uncertainty_at(&self, k: usize) -> f64 {
        if k == 0 {
            self.initial_uncertainty
        } else {
            self.uncertainty
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateDecision {
    Explore,
    Exploit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRecord {
    pub state_id: usize,
    pub ratio: f64,
    pub decision: GateDecision,
}

/// `|a_cur - a_prev| / max(|a_prev|, guard)` with Euclidean norms.
pub fn action_distance_ratio(a_prev: &[f64], a_cur: &[f64], guard: f64) -> Result<f64> {
    check_dim("action distance ratio", a_prev.len(), a_cur.len())?;
    let dist = a_prev
        .iter()
        .zip(a_cur)
        .map(|(p, c)| (c - p) * (c - p))
        .sum::<f64>()
        .sqrt();
    let norm = a_prev.iter().map(|p| p * p).sum::<f64>().sqrt();
    Ok(dist / norm.max(guard))
}

/// Threshold at a rank of the ascending ratio ranking.
///
/// The rank is `ceil((1 - U) L)`, 1-based; rank 0 gives a zero threshold so
/// that `U = 1` always explores. With distinct ratios exactly `rank - 1`
/// values lie strictly below the threshold, which keeps the exploited
/// fraction within `1/L` of `1 - U`.
pub fn select_threshold(ratios: &[f64], uncertainty: f64) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::Empty("ratio ranking"));
    }
    if !(0.0..=1.0).contains(&uncertainty) {
        return Err(Error::InvalidArgument(format!(
            "uncertainty {uncertainty} outside [0, 1]"
        )));
    }
    let mut ranking = ratios.to_vec();
    ranking.sort_by(f64::total_cmp);
    Ok(threshold_from_sorted(&ranking, uncertainty))
}

fn threshold_from_sorted(ranking: &[f64], uncertainty: f64) -> f64 {
    let len = ranking.len();
    // Absorb rounding in (1 - U) * L for levels on a decimal grid.
    let scaled = (1.0 - uncertainty) * len as f64 - 1e-9;
    let rank = (scaled.ceil().max(0.0) as usize).min(len);
    if rank == 0 {
        0.0
    } else {
        ranking[rank - 1]
    }
}

/// Explore exactly when the ratio is strictly above the threshold.
#[inline]
pub fn gate(ratio: f64, threshold: f64) -> GateDecision {
    if ratio > threshold {
        GateDecision::Explore
    } else {
        GateDecision::Exploit
    }
}

/// Ratio between the snapshot's and the live actor's mean actions at `s`.
/// Without a snapshot the ratio is infinite, so the gate always explores.
pub fn compute_ratio(snapshot: Option<&PolicySnapshot>, live: &DenseNet, s: &[f64], guard: f64) -> Result<f64> {
    match snapshot {
        None => Ok(f64::INFINITY),
        Some(snap) => {
            let prev = mean_action(snap.actor(), s)?;
            let cur = mean_action(live, s)?;
            action_distance_ratio(&prev, &cur, guard)
        }
    }
}

/// Gate bookkeeping across update intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    k: usize,
    threshold: f64,
    ranking: Vec<f64>,
    ranking_threshold: f64,
}

impl ThresholdState {
    pub fn initial(cfg: &GateConfig) -> Self {
        Self {
            k: 0,
            threshold: cfg.initial_threshold,
            ranking: Vec::new(),
            ranking_threshold: cfg.initial_threshold,
        }
    }

    /// State after an interval `k` sampled under `threshold` produced `ratios`.
    pub fn from_interval(k: usize, threshold: f64, ratios: &[f64]) -> Self {
        let mut ranking = ratios.to_vec();
        ranking.sort_by(f64::total_cmp);
        Self {
            k,
            threshold,
            ranking,
            ranking_threshold: threshold,
        }
    }

    /// Index of the interval currently sampling.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Threshold for the interval currently sampling.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Ascending ratios from the most recently closed interval.
    pub fn ranking(&self) -> &[f64] {
        &self.ranking
    }

    /// Threshold that was in force while [`Self::ranking`] was collected.
    pub fn ranking_threshold(&self) -> f64 {
        self.ranking_threshold
    }

    pub fn ranking_len(&self) -> usize {
        self.ranking.len()
    }

    /// Number of ranked ratios strictly below the threshold they were sampled under.
    pub fn low_count(&self) -> usize {
        self.ranking.partition_point(|&r| r < self.ranking_threshold)
    }
}

/// `1 - L_low / L` for the most recently closed interval.
pub fn posterior_uncertainty(st: &ThresholdState) -> Result<f64> {
    let len = st.ranking_len();
    if len == 0 {
        return Err(Error::Empty("interval ranking"));
    }
    Ok(1.0 - st.low_count() as f64 / len as f64)
}

/// Closes interval `k` and opens `k + 1`.
///
/// The collected ratios are archived together with the threshold they were
/// sampled under, and ranked to produce the next threshold. With nothing
/// collected the previous threshold carries over.
pub fn advance_interval(st: &ThresholdState, cfg: &GateConfig, collected: &[f64]) -> Result<ThresholdState> {
    let next_k = st.k + 1;
    let mut ranking = collected.to_vec();
    if ranking.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::InvalidArgument("ratios must be finite and nonnegative".into()));
    }
    ranking.sort_by(f64::total_cmp);
    let threshold = if ranking.is_empty() {
        // Interval 0 has no snapshot to compare against, so this is routine there.
        if st.k == 0 {
            debug!("interval 0 collected no ratios; keeping threshold {}", st.threshold);
        } else {
            warn!(
                "interval {} collected no ratios; keeping threshold {}",
                st.k, st.threshold
            );
        }
        st.threshold
    } else {
        threshold_from_sorted(&ranking, cfg.uncertainty_at(next_k))
    };
    Ok(ThresholdState {
        k: next_k,
        threshold,
        ranking,
        ranking_threshold: st.threshold,
    })
}
