//! The gated rollout/update loop.

use log::{debug, info};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::checkpoint::Checkpoint;
use super::config::{ExperimentConfig, GateMode};
use super::metrics::MetricsRow;
use crate::advantage::{compute_advantages, RolloutBuffer, Transition};
use crate::error::{Error as CoreError, Result};
use crate::gate::{action_distance_ratio, advance_interval, gate, posterior_uncertainty, GateDecision, ThresholdState};
use crate::numerics::DenseNet;
use crate::policy::{mean_action, DiagonalGaussian, PolicySnapshot};
use crate::ppo::{ppo_update, ActorCritic};

/// Independent random streams of one run.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Init = 1,
    Action = 2,
    Shuffle = 3,
    Env = 4,
}

pub(crate) fn stream(seed: u64, which: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which);
    rng
}

fn rng_for(seed: u64, s: Stream) -> ChaCha8Rng {
    stream(seed, s as u64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub rows: Vec<MetricsRow>,
    /// Environment steps taken; always equals `total_steps`.
    pub transitions: u64,
}

/// A run that stopped early; carries the telemetry collected so far.
#[derive(Debug, Error)]
#[error("run with seed {seed} failed at update {update}: {source}")]
pub struct TrainFault {
    pub seed: u64,
    pub update: usize,
    pub rows: Vec<MetricsRow>,
    #[source]
    pub source: CoreError,
}

/// Hook invoked after every policy update.
pub trait UpdateObserver {
    fn on_update(&mut self, row: &MetricsRow, model: &ActorCritic);
}

impl<F: FnMut(&MetricsRow, &ActorCritic)> UpdateObserver for F {
    fn on_update(&mut self, row: &MetricsRow, model: &ActorCritic) {
        self(row, model)
    }
}

#[allow(clippy::result_large_err)]
pub fn train(cfg: &ExperimentConfig, seed: u64) -> std::result::Result<TrainOutcome, TrainFault> {
    train_observed(cfg, seed, &mut |_: &MetricsRow, _: &ActorCritic| {})
}

/// Runs one seed to completion, calling `observer` after each update.
#[allow(clippy::result_large_err)]
pub fn train_observed(
    cfg: &ExperimentConfig,
    seed: u64,
    observer: &mut dyn UpdateObserver,
) -> std::result::Result<TrainOutcome, TrainFault> {
    let mut rows = Vec::with_capacity(cfg.num_updates());
    let fault = |rows: Vec<MetricsRow>, update: usize, source: CoreError| TrainFault {
        seed,
        update,
        rows,
        source,
    };
    if let Err(e) = cfg.validate() {
        return Err(fault(rows, 0, e));
    }

    let mut init_rng = rng_for(seed, Stream::Init);
    let mut action_rng = rng_for(seed, Stream::Action);
    let mut shuffle_rng = rng_for(seed, Stream::Shuffle);
    let mut env_rng = rng_for(seed, Stream::Env);

    let mut env = cfg.env.make(cfg.train_horizon);
    let (obs_dim, act_dim) = (env.spec().obs_dim, env.spec().action_dim);
    let actor = DenseNet::mlp(obs_dim, &cfg.hidden_sizes, act_dim, cfg.actor_head_gain, &mut init_rng);
    let critic = DenseNet::mlp(obs_dim, &cfg.hidden_sizes, 1, cfg.critic_head_gain, &mut init_rng);
    let ppo_cfg = cfg.ppo();
    let adv_cfg = cfg.advantage();
    let schedule = cfg.anneal();
    let gate_cfg = cfg.gate_config();
    let mut model = ActorCritic::new(actor, critic, &ppo_cfg);
    let mut snapshot: Option<PolicySnapshot> = None;
    let mut thresholds = ThresholdState::initial(&gate_cfg);

    let interval = cfg.update_interval;
    let mut buf = RolloutBuffer::with_capacity(interval);
    let mut state = env.reset(env_rng.next_u64());
    let mut episode_return = 0.0;
    let mut t: u64 = 0;
    let mut k = 0usize;

    while t < cfg.total_steps {
        // The exploration scale is held fixed within an interval.
        let log_std = schedule.log_std_at(t);
        let steps = interval.min((cfg.total_steps - t) as usize);
        buf.clear();
        let mut ratios = Vec::with_capacity(steps);
        let mut finished = Vec::new();
        let mut explored = 0usize;

        for _ in 0..steps {
            let step = (|| -> Result<_> {
                let mu = mean_action(&model.actor, &state)?;
                let ratio = match &snapshot {
                    Some(snap) => Some(action_distance_ratio(
                        &mean_action(snap.actor(), &state)?,
                        &mu,
                        gate_cfg.denom_guard,
                    )?),
                    None => None,
                };
                let decision = match cfg.gate {
                    GateMode::Enabled => gate(ratio.unwrap_or(f64::INFINITY), thresholds.threshold()),
                    GateMode::Ablated => GateDecision::Explore,
                };
                let dist = DiagonalGaussian::isotropic(mu, log_std)?;
                let action = match decision {
                    GateDecision::Explore => dist.sample(&mut action_rng),
                    GateDecision::Exploit => dist.mean().to_vec(),
                };
                let log_prob_old = dist.log_prob(&action)?;
                let value_estimate = model.critic.forward(&state)?[0];
                let result = env.step(&action)?;
                Ok((ratio, decision, action, log_prob_old, value_estimate, result))
            })();
            let (ratio, decision, action, log_prob_old, value_estimate, result) = match step {
                Ok(v) => v,
                Err(e) => return Err(fault(rows, k, e)),
            };
            if let Some(r) = ratio {
                ratios.push(r);
            }
            let explored_now = decision == GateDecision::Explore;
            explored += usize::from(explored_now);
            episode_return += result.reward;
            let done = result.done;
            buf.push(Transition {
                state: std::mem::replace(&mut state, result.state),
                action,
                log_prob_old,
                reward: result.reward,
                value_estimate,
                done,
                explored: explored_now,
                ratio,
            });
            if done {
                finished.push(episode_return);
                episode_return = 0.0;
                state = env.reset(env_rng.next_u64());
            }
        }
        t += steps as u64;
        if steps < interval {
            debug!("seed {seed}: {steps} trailing steps collected without an update");
            break;
        }

        let update = (|| -> Result<_> {
            let bootstrap = if buf.transitions().last().is_some_and(|t| t.done) {
                0.0
            } else {
                model.critic.forward(&state)?[0]
            };
            let adv = compute_advantages(&buf, &adv_cfg, bootstrap)?;
            let next_thresholds = advance_interval(&thresholds, &gate_cfg, &ratios)?;
            let previous_actor = model.actor.clone();
            let stats = ppo_update(&mut model, &buf, &adv, &ppo_cfg, log_std, &mut shuffle_rng)?;
            Ok((next_thresholds, previous_actor, stats))
        })();
        let (next_thresholds, previous_actor, stats) = match update {
            Ok(v) => v,
            Err(e) => return Err(fault(rows, k, e)),
        };

        let row = MetricsRow {
            env: cfg.env.name().into(),
            seed,
            step: t,
            update: k,
            r_train: (!finished.is_empty()).then(|| finished.iter().sum::<f64>() / finished.len() as f64),
            episodes: finished.len(),
            threshold: thresholds.threshold(),
            uncertainty: gate_cfg.uncertainty,
            ranking_len: next_thresholds.ranking_len(),
            low_count: next_thresholds.low_count(),
            pu: posterior_uncertainty(&next_thresholds).ok(),
            explore_fraction: explored as f64 / steps as f64,
            log_std,
            surrogate: stats.surrogate,
            value_loss: stats.value_loss,
            mean_ratio: stats.mean_ratio,
            clip_fraction: stats.clip_fraction,
        };
        info!(
            "seed {seed} k={k} t={t} r_train={:?} tau={:.4} pu={:?} explore={:.3}",
            row.r_train, row.threshold, row.pu, row.explore_fraction
        );
        observer.on_update(&row, &model);
        rows.push(row);
        snapshot = Some(PolicySnapshot::capture(&previous_actor, k));
        thresholds = next_thresholds;
        k += 1;
    }

    let checkpoint = Checkpoint::new(cfg.env, seed, t, schedule.log_std_at(t), &model.actor, &model.critic);
    Ok(TrainOutcome {
        checkpoint,
        rows,
        transitions: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;

    fn tiny(env: EnvKind, uncertainty: f64) -> ExperimentConfig {
        ExperimentConfig {
            env,
            total_steps: 4096,
            update_interval: 1024,
            train_horizon: 128,
            test_horizon: 256,
            uncertainty,
            epochs: 2,
            hidden_sizes: vec![16, 16],
            seeds: vec![0],
            ..ExperimentConfig::full()
        }
    }

    #[test]
    fn step_accounting() {
        let cfg = tiny(EnvKind::Lqr, 1.0);
        let out = train(&cfg, 1).unwrap();
        assert_eq!(out.transitions, 4096);
        assert_eq!(out.rows.len(), 4);
        let cfg = ExperimentConfig {
            total_steps: 4096 + 300,
            ..cfg
        };
        let out = train(&cfg, 1).unwrap();
        assert_eq!(out.transitions, 4396);
        assert_eq!(out.rows.len(), 4);
    }

    #[test]
    fn baseline_always_explores() {
        let out = train(&tiny(EnvKind::Pendulum, 1.0), 2).unwrap();
        for row in &out.rows {
            assert_eq!(row.explore_fraction, 1.0);
            assert_eq!(row.threshold, 0.0);
        }
        assert_eq!(out.rows[0].pu, None);
        assert_eq!(out.rows[1].pu, Some(1.0));
    }

    #[test]
    fn gate_reduces_exploration_after_first_ranking() {
        let out = train(&tiny(EnvKind::PointMass, 0.5), 3).unwrap();
        // Intervals 0 and 1 run before any ranking exists.
        assert_eq!(out.rows[0].explore_fraction, 1.0);
        assert_eq!(out.rows[1].explore_fraction, 1.0);
        assert!(out.rows[2].threshold > 0.0);
        assert!(out.rows[2].explore_fraction < 1.0);
        assert!(out.rows[2].pu.unwrap() < 1.0);
    }

    #[test]
    fn rerun_is_identical() {
        let cfg = tiny(EnvKind::PointMass, 0.8);
        let a = train(&cfg, 7).unwrap();
        let b = train(&cfg, 7).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn invalid_config_is_reported() {
        let cfg = ExperimentConfig {
            seeds: vec![],
            ..tiny(EnvKind::Lqr, 1.0)
        };
        let err = train(&cfg, 0).unwrap_err();
        assert!(err.rows.is_empty());
    }
}
