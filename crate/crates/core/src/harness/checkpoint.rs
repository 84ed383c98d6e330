use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::numerics::{DenseNet, LayerRecord};

pub const CHECKPOINT_FORMAT: &str = "ppoue-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained actor and critic, stored as versioned JSON. Floats are written
/// in shortest round-trip form, so a save/load cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub env: EnvKind,
    pub seed: u64,
    pub steps: u64,
    /// Exploration log standard deviation at the end of training.
    pub log_std: f64,
    pub actor: Vec<LayerRecord>,
    pub critic: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn new(env: EnvKind, seed: u64, steps: u64, log_std: f64, actor: &DenseNet, critic: &DenseNet) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            env,
            seed,
            steps,
            log_std,
            actor: actor.into(),
            critic: critic.into(),
        }
    }

    pub fn actor(&self) -> Result<DenseNet> {
        DenseNet::try_from(self.actor.clone())
    }

    pub fn critic(&self) -> Result<DenseNet> {
        DenseNet::try_from(self.critic.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "not a checkpoint: format '{}'",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn json_roundtrip_is_bit_exact(seed in any::<u64>(), log_std in -5.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let actor = DenseNet::mlp(3, &[7, 5], 2, 0.01, &mut rng);
            let critic = DenseNet::mlp(3, &[7], 1, 1.0, &mut rng);
            let ckpt = Checkpoint::new(EnvKind::Pendulum, seed, 10, log_std, &actor, &critic);
            let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
            let bits = |n: &DenseNet| n.parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back.actor().unwrap()), bits(&actor));
            prop_assert_eq!(bits(&back.critic().unwrap()), bits(&critic));
            prop_assert_eq!(back.log_std.to_bits(), log_std.to_bits());
        }
    }

    #[test]
    fn rejects_foreign_versions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DenseNet::mlp(1, &[2], 1, 1.0, &mut rng);
        let mut ckpt = Checkpoint::new(EnvKind::Lqr, 0, 0, 0.0, &net, &net);
        ckpt.version = 99;
        assert!(Checkpoint::from_json(&ckpt.to_json().unwrap()).is_err());
        assert!(Checkpoint::from_json("{\"format\": 1}").is_err());
    }
}
