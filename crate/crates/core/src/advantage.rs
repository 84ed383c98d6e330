//! Rollout storage and generalized advantage estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob_old: f64,
    pub reward: f64,
    pub value_estimate: f64,
    /// Episode ended after this step (terminal or horizon reached).
    pub done: bool,
    /// Gate sampled a fresh action rather than taking the policy mean.
    pub explored: bool,
    /// Action distance ratio observed at this state; `None` before the
    /// first policy snapshot exists.
    pub ratio: Option<f64>,
}

/// Transitions collected between two policy updates, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    transitions: Vec<Transition>,
}

impl RolloutBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            transitions: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, transition: Transition) {
        self.transitions.push(transition);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
    }

    /// Indices one past each episode end, i.e. the episode boundaries.
    pub fn episode_ends(&self) -> Vec<usize> {
        self.transitions
            .iter()
            .enumerate()
            .filter(|(_, t)| t.done)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

impl FromIterator<Transition> for RolloutBuffer {
    fn from_iter<I: IntoIterator<Item = Transition>>(iter: I) -> Self {
        Self {
            transitions: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub normalize: bool,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            normalize: true,
        }
    }
}

impl AdvantageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Advantages and value targets for one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// GAE(gamma, lambda) over the buffer.
///
/// `bootstrap_value` is the critic's estimate for the state following the
/// last transition, used only when that transition is not `done`.
/// Returns are computed before normalization.
pub fn compute_advantages(buf: &RolloutBuffer, cfg: &AdvantageConfig, bootstrap_value: f64) -> Result<Advantages> {
    let ts = buf.transitions();
    if ts.is_empty() {
        return Err(Error::Empty("rollout buffer"));
    }
    let n = ts.len();
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    let mut next_value = bootstrap_value;
    for i in (0..n).rev() {
        let t = &ts[i];
        let live = if t.done { 0.0 } else { 1.0 };
        let delta = t.reward + cfg.gamma * next_value * live - t.value_estimate;
        running = delta + cfg.gamma * cfg.lambda * live * running;
        advantages[i] = running;
        next_value = t.value_estimate;
    }
    let returns = advantages.iter().zip(ts).map(|(a, t)| a + t.value_estimate).collect();
    if cfg.normalize && n > 1 {
        normalize(&mut advantages);
    }
    Ok(Advantages { advantages, returns })
}

fn normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    xs.iter_mut().for_each(|x| *x = (*x - mean) * scale);
}
