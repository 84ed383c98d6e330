use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageConfig;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::gate::GateConfig;
use crate::numerics::AdamConfig;
use crate::policy::AnnealSchedule;
use crate::ppo::PpoConfig;

/// Whether the exploration gate controls action selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    #[default]
    Enabled,
    /// Every step samples; thresholds stay at zero. Ratios are still
    /// measured for telemetry.
    Ablated,
}

impl std::str::FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enabled" => Ok(Self::Enabled),
            "ablated" => Ok(Self::Ablated),
            other => Err(Error::InvalidArgument(format!("unknown gate mode '{other}'"))),
        }
    }
}

/// Everything needed to reproduce a training run.
///
/// Field names are the keys of the TOML config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    /// Total environment steps per run.
    pub total_steps: u64,
    /// Maximum episode length while training.
    pub train_horizon: usize,
    /// Maximum episode length while testing.
    pub test_horizon: usize,
    /// Environment steps between policy updates.
    pub update_interval: usize,
    /// Ratio uncertainty level used from the first update on.
    pub uncertainty: f64,
    pub initial_uncertainty: f64,
    pub initial_threshold: f64,
    pub clip_epsilon: f64,
    pub epochs: usize,
    pub log_std_start: f64,
    pub log_std_end: f64,

    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub hidden_sizes: Vec<usize>,
    pub actor_head_gain: f64,
    pub critic_head_gain: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub normalize_advantages: bool,
    pub minibatch_size: usize,
    pub value_loss_coeff: f64,
    /// Zero disables gradient-norm clipping.
    pub max_grad_norm: f64,
    pub mask_exploit: bool,
    pub learning_rate: f64,
    pub critic_learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub ratio_denom_guard: f64,
    pub gate: GateMode,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Hyperparameters of the full-scale profile: one million steps, ten seeds.
    pub fn full() -> Self {
        Self {
            env: EnvKind::Pendulum,
            total_steps: 1_000_000,
            train_horizon: 512,
            test_horizon: 2048,
            update_interval: 2048,
            uncertainty: 1.0,
            initial_uncertainty: 1.0,
            initial_threshold: 0.0,
            clip_epsilon: 0.2,
            epochs: 80,
            log_std_start: -0.1,
            log_std_end: -1.6,
            seeds: (0..10).collect(),
            eval_episodes: 100,
            hidden_sizes: vec![64, 64],
            actor_head_gain: 0.01,
            critic_head_gain: 1.0,
            gamma: 0.99,
            gae_lambda: 0.95,
            normalize_advantages: true,
            minibatch_size: 64,
            value_loss_coeff: 0.5,
            max_grad_norm: 0.5,
            mask_exploit: false,
            learning_rate: 3e-4,
            critic_learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            ratio_denom_guard: 1e-8,
            gate: GateMode::Enabled,
            output_dir: PathBuf::from("runs"),
        }
    }

    /// Workstation profile: 2e5 steps, five seeds, otherwise identical.
    pub fn desk() -> Self {
        Self {
            total_steps: 200_000,
            seeds: (0..5).collect(),
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.update_interval == 0 || self.total_steps == 0 {
            return Err(Error::Config("total_steps and update_interval must be positive".into()));
        }
        if self.update_interval as u64 > self.total_steps {
            return Err(Error::Config("update_interval exceeds total_steps".into()));
        }
        if self.train_horizon == 0 || self.train_horizon > self.test_horizon {
            return Err(Error::Config("need 0 < train_horizon <= test_horizon".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.ppo().validate()?;
        self.advantage().validate()?;
        self.anneal().validate()?;
        self.gate_config().validate()?;
        Ok(())
    }

    /// Updates happen at every multiple of `update_interval`; steps past the
    /// last multiple are collected but never trained on.
    pub fn num_updates(&self) -> usize {
        (self.total_steps / self.update_interval as u64) as usize
    }

    pub fn ppo(&self) -> PpoConfig {
        let adam = |learning_rate| AdamConfig {
            learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        };
        PpoConfig {
            clip_epsilon: self.clip_epsilon,
            epochs: self.epochs,
            minibatch_size: self.minibatch_size,
            value_loss_coeff: self.value_loss_coeff,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
            mask_exploit: self.mask_exploit,
            actor_optimizer: adam(self.learning_rate),
            critic_optimizer: adam(self.critic_learning_rate),
        }
    }

    pub fn advantage(&self) -> AdvantageConfig {
        AdvantageConfig {
            gamma: self.gamma,
            lambda: self.gae_lambda,
            normalize: self.normalize_advantages,
        }
    }

    pub fn anneal(&self) -> AnnealSchedule {
        AnnealSchedule {
            start_log_std: self.log_std_start,
            end_log_std: self.log_std_end,
            total_steps: self.total_steps,
        }
    }

    /// Gate parameters actually in force; the ablated mode pins `U = 1`.
    pub fn gate_config(&self) -> GateConfig {
        match self.gate {
            GateMode::Enabled => GateConfig {
                uncertainty: self.uncertainty,
                initial_uncertainty: self.initial_uncertainty,
                initial_threshold: self.initial_threshold,
                denom_guard: self.ratio_denom_guard,
            },
            GateMode::Ablated => GateConfig {
                denom_guard: self.ratio_denom_guard,
                ..GateConfig::default()
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Replaces the fields named in a TOML document, keeping the rest.
    /// Unlike [`Self::from_toml_str`] the result is not validated, so
    /// further overrides can follow.
    pub fn overlay_toml(&self, text: &str) -> Result<Self> {
        let patch: toml::Table = toml::from_str(text)?;
        let mut merged = toml::Table::try_from(self)?;
        merged.extend(patch);
        Ok(merged.try_into()?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_profile_defaults() {
        let c = ExperimentConfig::full();
        assert_eq!(c.total_steps, 1_000_000);
        assert_eq!((c.train_horizon, c.test_horizon, c.update_interval), (512, 2048, 2048));
        assert_eq!((c.initial_uncertainty, c.initial_threshold), (1.0, 0.0));
        assert_eq!((c.clip_epsilon, c.epochs), (0.2, 80));
        assert_eq!((c.log_std_start, c.log_std_end), (-0.1, -1.6));
        assert_eq!(c.seeds.len(), 10);
        c.validate().unwrap();
    }

    #[test]
    fn desk_profile_scales_down() {
        let c = ExperimentConfig::default();
        assert_eq!(c.total_steps, 200_000);
        assert_eq!(c.seeds.len(), 5);
        c.validate().unwrap();
        assert_eq!(c.num_updates(), 97);
    }

    #[test]
    fn toml_roundtrip_and_partial_files() {
        let c = ExperimentConfig {
            total_steps: 4096,
            ..ExperimentConfig::full()
        };
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
        let partial = "env = \"lqr\"\ntotal_steps = 8192\nuncertainty = 0.9\n";
        let p = ExperimentConfig::from_toml_str(partial).unwrap();
        assert_eq!(p.env, EnvKind::Lqr);
        assert_eq!(p.uncertainty, 0.9);
        assert_eq!(p.epochs, 80);
        assert!(ExperimentConfig::from_toml_str("bogus_key = 1\ntotal_steps = 4096").is_err());
    }

    #[test]
    fn overlay_keeps_base_profile() {
        let c = ExperimentConfig::full()
            .overlay_toml("env = \"lqr\"\nseeds = [3]\n")
            .unwrap();
        assert_eq!(c.total_steps, 1_000_000);
        assert_eq!(c.env, EnvKind::Lqr);
        assert_eq!(c.seeds, vec![3]);
        assert!(ExperimentConfig::full().overlay_toml("nope = 1").is_err());
        assert_eq!("ablated".parse::<GateMode>().unwrap(), GateMode::Ablated);
        assert!("off".parse::<GateMode>().is_err());
    }

    #[test]
    fn rejects_inconsistent_settings() {
        let base = ExperimentConfig {
            total_steps: 4096,
            ..ExperimentConfig::full()
        };
        let bad = [
            ExperimentConfig {
                update_interval: 8192,
                ..base.clone()
            },
            ExperimentConfig {
                total_steps: 0,
                ..base.clone()
            },
            ExperimentConfig {
                train_horizon: 4096,
                ..base.clone()
            },
            ExperimentConfig {
                seeds: vec![],
                ..base.clone()
            },
            ExperimentConfig {
                uncertainty: 1.2,
                ..base.clone()
            },
            ExperimentConfig {
                epochs: 0,
                ..base.clone()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
