use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::train::stream;
use crate::envs::{EnvKind, Environment};
use crate::error::{check_dim, Error, Result};
use crate::numerics::DenseNet;
use crate::policy::mean_action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub horizon: usize,
}

impl EvalReport {
    pub fn from_returns(returns: Vec<f64>, horizon: usize) -> Self {
        let (mean, std) = mean_std(&returns);
        Self {
            returns,
            mean,
            std,
            horizon,
        }
    }
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

const EVAL_STREAM: u64 = 17;

/// Per-episode reset seeds for an evaluation seed.
fn episode_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = stream(seed, EVAL_STREAM);
    (0..episodes).map(|_| rng.next_u64()).collect()
}

fn rollout(
    env: &mut dyn Environment,
    reset_seed: u64,
    policy: &mut impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<f64> {
    let mut state = env.reset(reset_seed);
    let mut total = 0.0;
    loop {
        let action = policy(&state)?;
        let step = env.step(&action)?;
        total += step.reward;
        if step.done {
            return Ok(total);
        }
        state = step.state;
    }
}

/// Rolls `policy` out on the evaluation episodes of `seed`. Every evaluator
/// with the same `(env, horizon, episodes, seed)` sees the same resets.
pub fn evaluate_policy(
    env: EnvKind,
    horizon: usize,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<EvalReport> {
    if episodes == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("episodes and horizon must be positive".into()));
    }
    let mut env = env.make(horizon);
    let returns = episode_seeds(seed, episodes)
        .into_iter()
        .map(|s| rollout(env.as_mut(), s, &mut policy))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_returns(returns, horizon))
}

/// Deterministic rollouts that always take the policy mean.
pub fn evaluate_actor(
    actor: &DenseNet,
    env: EnvKind,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let spec = env.make(1).spec().clone();
    check_dim("checkpoint observation width", spec.obs_dim, actor.input_dim())?;
    check_dim("checkpoint action width", spec.action_dim, actor.output_dim())?;
    evaluate_policy(env, horizon, episodes, seed, |state| mean_action(actor, state))
}

pub fn evaluate(
    checkpoint: &Checkpoint,
    env: EnvKind,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_actor(&checkpoint.actor()?, env, horizon, episodes, seed)
}

/// Same episodes as [`evaluate`], with actions uniform over the bounds.
pub fn evaluate_random(env: EnvKind, horizon: usize, episodes: usize, seed: u64) -> Result<EvalReport> {
    let spec = env.make(1).spec().clone();
    let mut rng = stream(seed, EVAL_STREAM + 1);
    evaluate_policy(env, horizon, episodes, seed, |_| {
        Ok(spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(l, h)| rng.random_range(*l..=*h))
            .collect())
    })
}
