//! Golden trajectory fixtures shared by the golden and acceptance targets.
#![allow(dead_code)]

use std::path::PathBuf;

use ppoue::envs::{EnvKind, StepResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One recorded episode: the actions are stored alongside the outcome so
/// replay does not depend on any random number generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Golden {
    pub env: EnvKind,
    pub horizon: usize,
    pub reset_seed: u64,
    pub initial_state: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    pub steps: Vec<StepResult>,
}

pub const CASES: [(EnvKind, u64); 6] = [
    (EnvKind::Pendulum, 0),
    (EnvKind::Pendulum, 1234),
    (EnvKind::PointMass, 0),
    (EnvKind::PointMass, 77),
    (EnvKind::Lqr, 0),
    (EnvKind::Lqr, 2024),
];

pub const HORIZON: usize = 250;

pub fn fixture_path(env: EnvKind, seed: u64) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(format!("golden_{env}_{seed}.json"))
}

/// Actions slightly beyond the bounds so clamping is exercised too.
pub fn record(env: EnvKind, seed: u64) -> Golden {
    let mut e = env.make(HORIZON);
    let spec = e.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let initial_state = e.reset(seed);
    let mut actions = Vec::new();
    let mut steps = Vec::new();
    loop {
        let action: Vec<f64> = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(l, h)| rng.random_range(1.1 * l..1.1 * h))
            .collect();
        let step = e.step(&action).unwrap();
        let done = step.done;
        actions.push(action);
        steps.push(step);
        if done {
            break;
        }
    }
    Golden {
        env,
        horizon: HORIZON,
        reset_seed: seed,
        initial_state,
        actions,
        steps,
    }
}

/// Replays the stored actions and reports the first bitwise difference.
pub fn replay(golden: &Golden) -> Result<(), String> {
    let mut e = golden.env.make(golden.horizon);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if bits(&e.reset(golden.reset_seed)) != bits(&golden.initial_state) {
        return Err("initial state differs".into());
    }
    for (t, (action, want)) in golden.actions.iter().zip(&golden.steps).enumerate() {
        let got = e.step(action).map_err(|err| format!("step {t}: {err}"))?;
        if bits(&got.state) != bits(&want.state)
            || got.reward.to_bits() != want.reward.to_bits()
            || got.done != want.done
        {
            return Err(format!("step {t}: got {got:?}, stored {want:?}"));
        }
    }
    Ok(())
}

pub fn load(env: EnvKind, seed: u64) -> Golden {
    maybe_regenerate();
    let path = fixture_path(env, seed);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// With `UPDATE_GOLDEN=1` the fixtures are rewritten from the current code.
pub fn maybe_regenerate() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        if std::env::var_os("UPDATE_GOLDEN").is_some_and(|v| v == "1") {
            for (env, seed) in CASES {
                let json = serde_json::to_string_pretty(&record(env, seed)).unwrap();
                std::fs::write(fixture_path(env, seed), json + "\n").unwrap();
            }
        }
    });
}
