//! Continuous-control environments.
//!
//! Physics constants (all frozen by the golden trajectory fixtures):
//!
//! * pendulum: g = 10, m = 1, l = 1, dt = 0.05, |omega| <= 8, |torque| <= 2.
//!   Angle 0 is upright. Cost `angle^2 + 0.1 omega^2 + 0.001 u^2`.
//! * point-mass: dt = 0.1, force in [-1, 1]^2, velocity damping 0.05,
//!   positions confined to [-2, 2]^2. Reward `-|pos - goal| - 0.01 |u|^2`.
//! * lqr: 4-d state, 2-d input, `x' = A x + B u`, reward `-(x'Qx + u'Ru)`
//!   with Q = I, R = 0.1 I, inputs in [-10, 10], episodes capped at 200 steps.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_len: usize,
}

impl EnvSpec {
    fn clamp(&self, action: &[f64]) -> Result<Vec<f64>> {
        check_dim("env action", self.action_dim, action.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NumericalFault("non-finite action".into()));
        }
        Ok(action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; the initial state depends only on `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances one step. Actions are clamped to the bounds first.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Pendulum,
    PointMass,
    Lqr,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Pendulum, EnvKind::PointMass, EnvKind::Lqr];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "point-mass",
            EnvKind::Lqr => "lqr",
        }
    }

    /// Builds the environment with episodes truncated at `horizon` steps
    /// (or earlier where the environment has its own limit).
    pub fn make(self, horizon: usize) -> Box<dyn Environment> {
        match self {
            EnvKind::Pendulum => Box::new(Pendulum::new(horizon)),
            EnvKind::PointMass => Box::new(PointMass::new(horizon)),
            EnvKind::Lqr => Box::new(Lqr::new(horizon)),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown environment '{s}'")))
    }
}

/// Step counter shared by all environments.
#[derive(Debug, Clone, Default)]
struct Episode {
    t: usize,
    done: bool,
}

impl Episode {
    fn begin(&mut self) {
        self.t = 0;
        self.done = false;
    }

    fn ensure_active(&self) -> Result<()> {
        if self.done {
            Err(Error::StepAfterDone)
        } else {
            Ok(())
        }
    }

    fn advance(&mut self, limit: usize, terminal: bool) -> bool {
        self.t += 1;
        self.done = terminal || self.t >= limit;
        self.done
    }
}

fn normalize_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    omega: f64,
    episode: Episode,
}

impl Pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;

    pub fn new(horizon: usize) -> Self {
        Self {
            spec: EnvSpec {
                name: EnvKind::Pendulum.name().into(),
                obs_dim: 3,
                action_dim: 1,
                action_low: vec![-Self::MAX_TORQUE],
                action_high: vec![Self::MAX_TORQUE],
                max_episode_len: horizon,
            },
            theta: 0.0,
            omega: 0.0,
            episode: Episode { t: 0, done: true },
        }
    }

    /// Places the pendulum at an explicit angle and angular velocity.
    pub fn set_state(&mut self, theta: f64, omega: f64) -> Vec<f64> {
        self.theta = theta;
        self.omega = omega;
        self.episode.begin();
        self.observe()
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.omega]
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = rng.random_range(-PI..=PI);
        let omega = rng.random_range(-1.0..=1.0);
        self.set_state(theta, omega)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.episode.ensure_active()?;
        let u = self.spec.clamp(action)?[0];
        let cost = normalize_angle(self.theta).powi(2) + 0.1 * self.omega.powi(2) + 0.001 * u * u;
        let accel = 3.0 * Self::GRAVITY / (2.0 * Self::LENGTH) * self.theta.sin()
            + 3.0 / (Self::MASS * Self::LENGTH * Self::LENGTH) * u;
        self.omega = (self.omega + accel * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += self.omega * Self::DT;
        let done = self.episode.advance(self.spec.max_episode_len, false);
        Ok(StepResult {
            state: self.observe(),
            reward: -cost,
            done,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    episode: Episode,
}

impl PointMass {
    pub const DT: f64 = 0.1;
    pub const DAMPING: f64 = 0.05;
    pub const MAX_FORCE: f64 = 1.0;
    pub const ARENA: f64 = 2.0;

    pub fn new(horizon: usize) -> Self {
        Self {
            spec: EnvSpec {
                name: EnvKind::PointMass.name().into(),
                obs_dim: 6,
                action_dim: 2,
                action_low: vec![-Self::MAX_FORCE; 2],
                action_high: vec![Self::MAX_FORCE; 2],
                max_episode_len: horizon,
            },
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            episode: Episode { t: 0, done: true },
        }
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2], goal: [f64; 2]) -> Vec<f64> {
        self.pos = pos;
        self.vel = vel;
        self.goal = goal;
        self.episode.begin();
        self.observe()
    }

    fn observe(&self) -> Vec<f64> {
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0],
            self.vel[1],
            self.goal[0],
            self.goal[1],
        ]
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || rng.random_range(-1.0..=1.0);
        let pos = [draw(), draw()];
        let goal = [draw(), draw()];
        self.set_state(pos, [0.0; 2], goal)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.episode.ensure_active()?;
        let u = self.spec.clamp(action)?;
        for (i, ui) in u.iter().enumerate() {
            self.vel[i] = (1.0 - Self::DAMPING) * self.vel[i] + ui * Self::DT;
            self.pos[i] += self.vel[i] * Self::DT;
            if self.pos[i].abs() > Self::ARENA {
                self.pos[i] = self.pos[i].clamp(-Self::ARENA, Self::ARENA);
                self.vel[i] = 0.0;
            }
        }
        let dist = ((self.pos[0] - self.goal[0]).powi(2) + (self.pos[1] - self.goal[1]).powi(2)).sqrt();
        let effort = u[0] * u[0] + u[1] * u[1];
        let done = self.episode.advance(self.spec.max_episode_len, false);
        Ok(StepResult {
            state: self.observe(),
            reward: -dist - 0.01 * effort,
            done,
        })
    }
}

/// Discrete-time linear system with quadratic cost.
#[derive(Debug, Clone)]
pub struct Lqr {
    spec: EnvSpec,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    x: DVector<f64>,
    episode: Episode,
}

impl Lqr {
    pub const EPISODE_CAP: usize = 200;
    pub const MAX_INPUT: f64 = 10.0;

    pub fn new(horizon: usize) -> Self {
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(4, 4, &[
            0.97, 0.1, 0.0, 0.0,
            -0.1, 0.97, 0.0, 0.0,
            0.0, 0.0, 0.97, 0.05,
            0.0, 0.0, 0.0, 0.97,
        ]);
        #[rustfmt::skip]
        let b = DMatrix::from_row_slice(4, 2, &[
            0.1, 0.0,
            0.0, 0.0,
            0.0, 0.1,
            0.0, 0.1,
        ]);
        Self::with_matrices(a, b, DMatrix::identity(4, 4), DMatrix::identity(2, 2) * 0.1, horizon)
            .expect("built-in system is consistent")
    }

    pub fn with_matrices(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
            return Err(Error::InvalidArgument("inconsistent LQR matrix shapes".into()));
        }
        Ok(Self {
            spec: EnvSpec {
                name: EnvKind::Lqr.name().into(),
                obs_dim: n,
                action_dim: m,
                action_low: vec![-Self::MAX_INPUT; m],
                action_high: vec![Self::MAX_INPUT; m],
                max_episode_len: horizon.min(Self::EPISODE_CAP),
            },
            x: DVector::zeros(n),
            a,
            b,
            q,
            r,
            episode: Episode { t: 0, done: true },
        })
    }

    pub fn set_state(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("lqr state", self.spec.obs_dim, x.len())?;
        self.x = DVector::from_column_slice(x);
        self.episode.begin();
        Ok(x.to_vec())
    }

    pub fn matrices(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        (&self.a, &self.b, &self.q, &self.r)
    }
}

impl Environment for Lqr {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..self.spec.obs_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.set_state(&x).expect("dimension matches")
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.episode.ensure_active()?;
        let u = DVector::from_vec(self.spec.clamp(action)?);
        let cost = self.x.dot(&(&self.q * &self.x)) + u.dot(&(&self.r * &u));
        self.x = &self.a * &self.x + &self.b * &u;
        let done = self.episode.advance(self.spec.max_episode_len, false);
        Ok(StepResult {
            state: self.x.iter().copied().collect(),
            reward: -cost,
            done,
        })
    }
}

/// Infinite-horizon optimal feedback gain `K` (with `u = -K x`), from
/// iterating the discrete Riccati recursion until successive cost matrices
/// differ by less than `1e-10` elementwise.
pub fn lqr_optimal_policy(env: &Lqr) -> Result<DMatrix<f64>> {
    const MAX_ITERS: usize = 100_000;
    let (a, b, q, r) = env.matrices();
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = r + b.transpose() * p * b;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::NumericalFault("singular R + B'PB".into()))?;
        Ok(s_inv * b.transpose() * p * a)
    };
    let mut p = q.clone();
    for _ in 0..MAX_ITERS {
        let k = gain(&p)?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let delta = (&next - &p).abs().max();
        p = next;
        if !delta.is_finite() {
            return Err(Error::NumericalFault("Riccati iteration diverged".into()));
        }
        if delta < 1e-10 {
            return gain(&p);
        }
    }
    Err(Error::NoConvergence(MAX_ITERS))
}

/// Undiscounted return of `u = -K x` from the given reset seed.
pub fn linear_policy_return(env: &mut Lqr, gain: &DMatrix<f64>, seed: u64) -> Result<f64> {
    let mut x = DVector::from_vec(env.reset(seed));
    let mut total = 0.0;
    loop {
        let u = -(gain * &x);
        let step = env.step(u.as_slice())?;
        total += step.reward;
        if step.done {
            return Ok(total);
        }
        x = DVector::from_vec(step.state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic() {
        for kind in EnvKind::ALL {
            let mut a = kind.make(50);
            let mut b = kind.make(50);
            assert_eq!(a.reset(17), b.reset(17));
            assert_ne!(a.reset(17), a.reset(18));
        }
    }

    #[test]
    fn pendulum_reset_ranges() {
        let mut env = Pendulum::new(10);
        for seed in 0..200 {
            env.reset(seed);
            assert!((-PI..=PI).contains(&env.theta));
            assert!((-1.0..=1.0).contains(&env.omega));
        }
    }

    #[test]
    fn lqr_reset_is_seeded_normal() {
        let mut env = Lqr::new(10);
        let x = env.reset(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let expected: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        assert_eq!(x, expected);
    }

    #[test]
    fn lqr_equilibrium() {
        let mut env = Lqr::new(10);
        env.set_state(&[0.0; 4]).unwrap();
        let r = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.state, vec![0.0; 4]);
    }

    #[test]
    fn pendulum_upright_is_fixed_point() {
        let mut env = Pendulum::new(10);
        env.set_state(0.0, 0.0);
        let r = env.step(&[0.0]).unwrap();
        assert!((r.state[0] - 1.0).abs() < 1e-12);
        assert!(r.state[1].abs() < 1e-12 && r.state[2].abs() < 1e-12);
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn point_mass_at_goal_costs_nothing() {
        let mut env = PointMass::new(10);
        env.set_state([0.5, -0.5], [0.0; 2], [0.5, -0.5]);
        assert_eq!(env.step(&[0.0, 0.0]).unwrap().reward, 0.0);
    }

    #[test]
    fn actions_are_clamped() {
        let mut a = Pendulum::new(10);
        let mut b = Pendulum::new(10);
        a.set_state(1.0, 0.0);
        b.set_state(1.0, 0.0);
        assert_eq!(a.step(&[50.0]).unwrap(), b.step(&[2.0]).unwrap());
    }

    #[test]
    fn step_after_done_is_error() {
        for kind in EnvKind::ALL {
            let mut env = kind.make(3);
            env.reset(0);
            let zero = vec![0.0; env.spec().action_dim];
            assert!(!env.step(&zero).unwrap().done);
            assert!(!env.step(&zero).unwrap().done);
            assert!(env.step(&zero).unwrap().done);
            assert!(matches!(env.step(&zero), Err(Error::StepAfterDone)));
        }
        assert!(matches!(Pendulum::new(5).step(&[0.0]), Err(Error::StepAfterDone)));
    }

    #[test]
    fn lqr_episode_is_capped() {
        assert_eq!(Lqr::new(512).spec().max_episode_len, Lqr::EPISODE_CAP);
        assert_eq!(Lqr::new(20).spec().max_episode_len, 20);
    }

    #[test]
    fn env_names_roundtrip() {
        for kind in EnvKind::ALL {
            assert_eq!(kind.name().parse::<EnvKind>().unwrap(), kind);
        }
        assert!("walker".parse::<EnvKind>().is_err());
    }

    #[test]
    fn extreme_bounded_actions_stay_finite() {
        for kind in EnvKind::ALL {
            let mut env = kind.make(2048);
            env.reset(3);
            let hi = env.spec().action_high.clone();
            for t in 0..env.spec().max_episode_len {
                let a: Vec<f64> = hi.iter().map(|h| if t % 7 < 4 { *h } else { -h }).collect();
                let r = env.step(&a).unwrap();
                assert!(r.reward.is_finite() && r.state.iter().all(|s| s.is_finite()));
            }
        }
    }

    fn scalar_lqr(a: f64) -> Lqr {
        let one = DMatrix::from_element(1, 1, 1.0);
        Lqr::with_matrices(DMatrix::from_element(1, 1, a), one.clone(), one.clone(), one, 100).unwrap()
    }

    /// Scalar Riccati recursion iterated directly.
    fn scalar_gain_oracle(a: f64, b: f64, q: f64, r: f64) -> f64 {
        let mut p = q;
        for _ in 0..10_000 {
            p = q + a * a * p - (a * p * b).powi(2) / (r + b * b * p);
        }
        a * b * p / (r + b * b * p)
    }

    #[test]
    fn scalar_gain_is_golden_ratio_conjugate() {
        let k = lqr_optimal_policy(&scalar_lqr(1.0)).unwrap()[(0, 0)];
        let oracle = scalar_gain_oracle(1.0, 1.0, 1.0, 1.0);
        assert!((k - oracle).abs() < 1e-9);
        assert!((k - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_dynamics_zero_gain() {
        let k = lqr_optimal_policy(&scalar_lqr(0.0)).unwrap();
        assert_eq!(k[(0, 0)], 0.0);
        let mut env = Lqr::new(10);
        let (_, b, q, r) = env.matrices();
        let (b, q, r) = (b.clone(), q.clone(), r.clone());
        env = Lqr::with_matrices(DMatrix::zeros(4, 4), b, q, r, 10).unwrap();
        assert!(lqr_optimal_policy(&env).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn optimal_gain_beats_perturbations() {
        let mut env = Lqr::new(2048);
        let k = lqr_optimal_policy(&env).unwrap();
        let mean_return = |env: &mut Lqr, gain: &DMatrix<f64>| -> f64 {
            (0..200)
                .map(|s| linear_policy_return(env, gain, s).unwrap())
                .sum::<f64>()
                / 200.0
        };
        let best = mean_return(&mut env, &k);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let delta = DMatrix::from_fn(2, 4, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
            assert!(best >= mean_return(&mut env, &(&k + delta)));
        }
        let passive = mean_return(&mut env, &DMatrix::zeros(2, 4));
        assert!(best > passive);
    }
}
