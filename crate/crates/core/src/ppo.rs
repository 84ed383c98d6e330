//! Clipped-surrogate policy update and critic regression.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{Advantages, RolloutBuffer};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, DenseNet, Gradient};
use crate::policy::LN_2PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub value_loss_coeff: f64,
    pub max_grad_norm: Option<f64>,
    /// Drop transitions that took the policy mean from the surrogate.
    pub mask_exploit: bool,
    pub actor_optimizer: AdamConfig,
    pub critic_optimizer: AdamConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            epochs: 80,
            minibatch_size: 64,
            value_loss_coeff: 0.5,
            max_grad_norm: Some(0.5),
            mask_exploit: false,
            actor_optimizer: AdamConfig::default(),
            critic_optimizer: AdamConfig::default(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_epsilon.is_nan() || self.clip_epsilon <= 0.0 {
            return Err(Error::Config("clip epsilon must be positive".into()));
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return Err(Error::Config("epochs and minibatch size must be positive".into()));
        }
        if matches!(self.max_grad_norm, Some(m) if m.is_nan() || m <= 0.0) {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Diagnostics of an update, evaluated over the whole buffer once all
/// epochs have run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`
#[inline]
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Inputs to the surrogate objective for a set of transitions.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateBatch<'a> {
    pub states: ArrayView2<'a, f64>,
    pub actions: ArrayView2<'a, f64>,
    pub log_prob_old: &'a [f64],
    pub advantages: &'a [f64],
    /// Per-sample inclusion; `None` includes everything.
    pub mask: Option<&'a [bool]>,
}

impl SurrogateBatch<'_> {
    fn len(&self) -> usize {
        self.states.nrows()
    }

    fn included(&self, i: usize) -> bool {
        self.mask.is_none_or(|m| m[i])
    }

    fn check(&self, actor: &DenseNet) -> Result<()> {
        let n = self.len();
        check_dim("surrogate actions rows", n, self.actions.nrows())?;
        check_dim("surrogate action width", actor.output_dim(), self.actions.ncols())?;
        check_dim("surrogate log_prob_old", n, self.log_prob_old.len())?;
        check_dim("surrogate advantages", n, self.advantages.len())?;
        if let Some(m) = self.mask {
            check_dim("surrogate mask", n, m.len())?;
        }
        Ok(())
    }
}

/// Per-sample probability ratios and surrogate terms.
struct SurrogateTerms {
    ratios: Vec<f64>,
    objective: f64,
    active: usize,
    clipped: usize,
    upstream: Array2<f64>,
    cache: crate::numerics::ForwardCache,
}

fn surrogate_terms(actor: &DenseNet, batch: &SurrogateBatch<'_>, log_std: f64, epsilon: f64) -> Result<SurrogateTerms> {
    batch.check(actor)?;
    let cache = actor.forward_batch(batch.states)?;
    let mu = cache.output();
    let d = actor.output_dim() as f64;
    let variance = (2.0 * log_std).exp();
    let log_norm = d * LN_2PI + d * variance.ln();
    let n = batch.len();
    let active = (0..n).filter(|&i| batch.included(i)).count();
    let mut upstream = Array2::zeros(mu.raw_dim());
    let mut ratios = Vec::with_capacity(n);
    let mut objective = 0.0;
    let mut clipped = 0;
    for i in 0..n {
        let a = batch.actions.row(i);
        let m = mu.row(i);
        let quad: f64 = a.iter().zip(m.iter()).map(|(a, m)| (a - m) * (a - m)).sum::<f64>() / variance;
        let log_prob = -0.5 * (log_norm + quad);
        let ratio = (log_prob - batch.log_prob_old[i]).exp();
        ratios.push(ratio);
        if !batch.included(i) {
            continue;
        }
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let bounded = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * adv;
        if bounded < unclipped {
            clipped += 1;
            objective += bounded;
        } else {
            objective += unclipped;
            // d(ratio * adv)/d mu = ratio * adv * (a - mu) / var; loss is the negated mean.
            let coeff = -unclipped / (variance * active as f64);
            for (u, (a, m)) in upstream.row_mut(i).iter_mut().zip(a.iter().zip(m.iter())) {
                *u = coeff * (a - m);
            }
        }
    }
    Ok(SurrogateTerms {
        ratios,
        objective,
        active,
        clipped,
        upstream,
        cache,
    })
}

/// Negated mean clipped surrogate over the included samples.
pub fn surrogate_loss(actor: &DenseNet, batch: &SurrogateBatch<'_>, log_std: f64, epsilon: f64) -> Result<f64> {
    let terms = surrogate_terms(actor, batch, log_std, epsilon)?;
    Ok(-terms.objective / terms.active.max(1) as f64)
}

/// Loss of [`surrogate_loss`] together with its gradient in the actor parameters.
pub fn surrogate_loss_and_grad(
    actor: &DenseNet,
    batch: &SurrogateBatch<'_>,
    log_std: f64,
    epsilon: f64,
) -> Result<(f64, Gradient)> {
    let terms = surrogate_terms(actor, batch, log_std, epsilon)?;
    let loss = -terms.objective / terms.active.max(1) as f64;
    if !loss.is_finite() {
        return Err(Error::NumericalFault(format!("surrogate loss is {loss}")));
    }
    let grad = actor.backward_batch(&terms.cache, terms.upstream.view())?;
    Ok((loss, grad))
}

/// `coeff * mean((V(s) - target)^2)` and its gradient in the critic parameters.
pub fn value_loss_and_grad(
    critic: &DenseNet,
    states: ArrayView2<'_, f64>,
    targets: &[f64],
    coeff: f64,
) -> Result<(f64, Gradient)> {
    check_dim("critic targets", states.nrows(), targets.len())?;
    check_dim("critic output", 1, critic.output_dim())?;
    let cache = critic.forward_batch(states)?;
    let values = cache.output();
    let n = targets.len() as f64;
    let mut upstream = Array2::zeros(values.raw_dim());
    let mut loss = 0.0;
    for (i, &target) in targets.iter().enumerate() {
        let err = values[[i, 0]] - target;
        loss += err * err;
        upstream[[i, 0]] = coeff * 2.0 * err / n;
    }
    let loss = coeff * loss / n;
    if !loss.is_finite() {
        return Err(Error::NumericalFault(format!("value loss is {loss}")));
    }
    Ok((loss, critic.backward_batch(&cache, upstream.view())?))
}

/// Actor and critic networks with their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub actor_optimizer: AdamState,
    pub critic_optimizer: AdamState,
}

impl ActorCritic {
    pub fn new(actor: DenseNet, critic: DenseNet, cfg: &PpoConfig) -> Self {
        let actor_optimizer = AdamState::new(&actor, cfg.actor_optimizer);
        let critic_optimizer = AdamState::new(&critic, cfg.critic_optimizer);
        Self {
            actor,
            critic,
            actor_optimizer,
            critic_optimizer,
        }
    }
}

/// Dense copies of the buffer's states and actions.
pub fn buffer_matrices(buf: &RolloutBuffer) -> Result<(Array2<f64>, Array2<f64>)> {
    let ts = buf.transitions();
    let first = ts.first().ok_or(Error::Empty("rollout buffer"))?;
    let (obs, act) = (first.state.len(), first.action.len());
    let mut states = Array2::zeros((ts.len(), obs));
    let mut actions = Array2::zeros((ts.len(), act));
    for (i, t) in ts.iter().enumerate() {
        check_dim("buffer state", obs, t.state.len())?;
        check_dim("buffer action", act, t.action.len())?;
        states.row_mut(i).iter_mut().zip(&t.state).for_each(|(d, s)| *d = *s);
        actions.row_mut(i).iter_mut().zip(&t.action).for_each(|(d, s)| *d = *s);
    }
    Ok((states, actions))
}

/// Runs `cfg.epochs` passes of shuffled minibatch Adam steps on the clipped
/// surrogate (actor) and squared value error (critic).
///
/// `log_std` is the exploration scale the buffer was collected under. The
/// only randomness consumed is the minibatch shuffling from `rng`.
pub fn ppo_update<R: Rng + ?Sized>(
    model: &mut ActorCritic,
    buf: &RolloutBuffer,
    adv: &Advantages,
    cfg: &PpoConfig,
    log_std: f64,
    rng: &mut R,
) -> Result<UpdateStats> {
    cfg.validate()?;
    let n = buf.len();
    check_dim("advantages", n, adv.advantages.len())?;
    check_dim("returns", n, adv.returns.len())?;
    let (states, actions) = buffer_matrices(buf)?;
    let log_prob_old: Vec<f64> = buf.transitions().iter().map(|t| t.log_prob_old).collect();
    let mask: Option<Vec<bool>> = cfg
        .mask_exploit
        .then(|| buf.transitions().iter().map(|t| t.explored).collect());

    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let mb_states = states.select(Axis(0), chunk);
            let mb_actions = actions.select(Axis(0), chunk);
            let mb_old: Vec<f64> = chunk.iter().map(|&i| log_prob_old[i]).collect();
            let mb_adv: Vec<f64> = chunk.iter().map(|&i| adv.advantages[i]).collect();
            let mb_ret: Vec<f64> = chunk.iter().map(|&i| adv.returns[i]).collect();
            let mb_mask: Option<Vec<bool>> = mask.as_ref().map(|m| chunk.iter().map(|&i| m[i]).collect());

            if mb_mask.as_ref().is_none_or(|m| m.iter().any(|&x| x)) {
                let batch = SurrogateBatch {
                    states: mb_states.view(),
                    actions: mb_actions.view(),
                    log_prob_old: &mb_old,
                    advantages: &mb_adv,
                    mask: mb_mask.as_deref(),
                };
                let (_, mut grad) = surrogate_loss_and_grad(&model.actor, &batch, log_std, cfg.clip_epsilon)?;
                if let Some(max) = cfg.max_grad_norm {
                    grad.clip_norm(max);
                }
                adam_step(&mut model.actor, &grad, &mut model.actor_optimizer)?;
            }

            let (_, mut grad) = value_loss_and_grad(&model.critic, mb_states.view(), &mb_ret, cfg.value_loss_coeff)?;
            if let Some(max) = cfg.max_grad_norm {
                grad.clip_norm(max);
            }
            adam_step(&mut model.critic, &grad, &mut model.critic_optimizer)?;
        }
    }

    let batch = SurrogateBatch {
        states: states.view(),
        actions: actions.view(),
        log_prob_old: &log_prob_old,
        advantages: &adv.advantages,
        mask: mask.as_deref(),
    };
    let terms = surrogate_terms(&model.actor, &batch, log_std, cfg.clip_epsilon)?;
    let (value_loss, _) = value_loss_and_grad(&model.critic, states.view(), &adv.returns, 1.0)?;
    let stats = UpdateStats {
        surrogate: terms.objective / terms.active.max(1) as f64,
        value_loss,
        mean_ratio: terms.ratios.iter().sum::<f64>() / n as f64,
        clip_fraction: terms.clipped as f64 / terms.active.max(1) as f64,
    };
    if [stats.surrogate, stats.value_loss, stats.mean_ratio]
        .iter()
        .any(|v| !v.is_finite())
    {
        return Err(Error::NumericalFault("non-finite update statistics".into()));
    }
    Ok(stats)
}
