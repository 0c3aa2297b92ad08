//! Small continuous-control tasks with explicit termination/truncation.
//!
//! Agents act in `[-1, 1]^|A|`; each environment rescales actions to its own
//! physical range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Static facts used to size networks and pick per-task defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub max_episode_steps: u32,
    pub has_failure_termination: bool,
    pub default_gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Failure or goal reached; no bootstrapping past this step.
    pub terminated: bool,
    /// Time limit hit.
    pub truncated: bool,
}

pub trait Env {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode; identical seeds give identical initial states.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Advances one step with a normalized action in `[-1, 1]^|A|`.
    fn step(&mut self, action: &[f64]) -> StepResult;
    /// Complete internal state, for checkpoints.
    fn state(&self) -> Vec<f64>;
    fn restore(&mut self, state: &[f64]) -> Result<()>;
}

/// Builds an environment by name.
pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "pointmass" => Ok(Box::new(PointMass::new())),
        other => Err(Error::Config(format!(
            "unknown environment '{other}' (expected pendulum or pointmass)"
        ))),
    }
}

pub fn env_spec(name: &str) -> Result<EnvSpec> {
    make_env(name).map(|e| e.spec().clone())
}

fn angle_normalize(x: f64) -> f64 {
    (x + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

// ---------------------------------------------------------------------------

/// Torque-limited swing-up of a rigid rod. `theta = 0` is upright.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    pub theta: f64,
    pub theta_dot: f64,
    pub dt: f64,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    t: u32,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Pendulum {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "pendulum",
                obs_dim: 3,
                action_dim: 1,
                max_episode_steps: 200,
                has_failure_termination: false,
                default_gamma: 0.99,
            },
            theta: 0.0,
            theta_dot: 0.0,
            dt: 0.05,
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            max_torque: 2.0,
            max_speed: 8.0,
            t: 0,
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    /// One semi-implicit Euler step under `torque` (clamped to the limit).
    pub fn step_torque(&mut self, torque: f64) -> StepResult {
        let u = torque.clamp(-self.max_torque, self.max_torque);
        let (g, m, l) = (self.gravity, self.mass, self.length);
        let cost =
            angle_normalize(self.theta).powi(2) + 0.1 * self.theta_dot.powi(2) + 0.001 * u * u;
        let acc = 3.0 * g / (2.0 * l) * self.theta.sin() + 3.0 * u / (m * l * l);
        self.theta_dot = (self.theta_dot + acc * self.dt).clamp(-self.max_speed, self.max_speed);
        self.theta += self.theta_dot * self.dt;
        self.t += 1;
        StepResult {
            obs: self.observe(),
            reward: -cost,
            terminated: false,
            truncated: self.t >= self.spec.max_episode_steps,
        }
    }

    /// Mechanical energy of the rod about its pivot.
    pub fn energy(&self) -> f64 {
        let (g, m, l) = (self.gravity, self.mass, self.length);
        0.5 * (m * l * l / 3.0) * self.theta_dot.powi(2) + m * g * 0.5 * l * self.theta.cos()
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        self.theta_dot = rng.gen_range(-1.0..1.0);
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        self.step_torque(self.max_torque * action[0])
    }

    fn state(&self) -> Vec<f64> {
        vec![self.theta, self.theta_dot, self.t as f64]
    }

    fn restore(&mut self, state: &[f64]) -> Result<()> {
        let [theta, theta_dot, t] = state else {
            return Err(Error::Checkpoint(format!(
                "pendulum state needs 3 values, got {}",
                state.len()
            )));
        };
        self.theta = *theta;
        self.theta_dot = *theta_dot;
        self.t = *t as u32;
        Ok(())
    }
}

// ---------------------------------------------------------------------------

/// Planar double integrator steered to the origin.
#[derive(Clone, Debug)]
pub struct PointMass {
    spec: EnvSpec,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub dt: f64,
    pub max_accel: f64,
    pub goal_radius: f64,
    t: u32,
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new()
    }
}

impl PointMass {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "pointmass",
                obs_dim: 4,
                action_dim: 2,
                max_episode_steps: 100,
                has_failure_termination: true,
                default_gamma: 0.99,
            },
            pos: [0.0; 2],
            vel: [0.0; 2],
            dt: 0.1,
            max_accel: 1.0,
            goal_radius: 0.05,
            t: 0,
        }
    }

    pub fn distance(&self) -> f64 {
        self.pos[0].hypot(self.pos[1])
    }

    pub fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    /// Places the mass at `pos` with velocity `vel` and restarts the clock.
    pub fn set(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.t = 0;
    }
}

impl Env for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        self.set(pos, [0.0; 2]);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        for k in 0..2 {
            let a = self.max_accel * action[k].clamp(-1.0, 1.0);
            self.vel[k] += a * self.dt;
            self.pos[k] += self.vel[k] * self.dt;
        }
        self.t += 1;
        let d = self.distance();
        StepResult {
            obs: self.observe(),
            reward: -d,
            terminated: d < self.goal_radius,
            truncated: self.t >= self.spec.max_episode_steps,
        }
    }

    fn state(&self) -> Vec<f64> {
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0],
            self.vel[1],
            self.t as f64,
        ]
    }

    fn restore(&mut self, state: &[f64]) -> Result<()> {
        let [px, py, vx, vy, t] = state else {
            return Err(Error::Checkpoint(format!(
                "point-mass state needs 5 values, got {}",
                state.len()
            )));
        };
        self.pos = [*px, *py];
        self.vel = [*vx, *vy];
        self.t = *t as u32;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_rest_is_a_fixed_point_with_zero_reward() {
        let mut p = Pendulum::new();
        let r = p.step_torque(0.0);
        assert_eq!((p.theta, p.theta_dot), (0.0, 0.0));
        assert_eq!(r.reward, 0.0);
        assert!(!r.terminated);
    }

    #[test]
    fn pendulum_truncates_at_200() {
        let mut p = Pendulum::new();
        p.reset(3);
        for i in 1..=200 {
            let r = p.step(&[0.3]);
            assert!(!r.terminated);
            assert_eq!(r.truncated, i == 200);
        }
    }

    #[test]
    fn torque_is_clamped() {
        let mut a = Pendulum::new();
        let mut b = Pendulum::new();
        a.theta = 1.0;
        b.theta = 1.0;
        let ra = a.step_torque(50.0);
        let rb = b.step_torque(2.0);
        assert_eq!(ra, rb);
    }

    #[test]
    fn energy_is_conserved_at_small_dt() {
        let mut p = Pendulum::new();
        p.dt = 0.005;
        p.theta = 2.0;
        p.theta_dot = 0.5;
        let e0 = p.energy();
        for _ in 0..200 {
            p.step_torque(0.0);
        }
        assert!(
            ((p.energy() - e0) / e0.abs()).abs() < 0.01,
            "{} vs {e0}",
            p.energy()
        );
    }

    #[test]
    fn resets_are_deterministic() {
        let mut a = Pendulum::new();
        let mut b = Pendulum::new();
        assert_eq!(a.reset(9), b.reset(9));
        assert_ne!(a.reset(9), a.reset(10));
        let mut c = PointMass::new();
        let mut d = PointMass::new();
        assert_eq!(c.reset(4), d.reset(4));
    }

    #[test]
    fn pointmass_rest_and_approach() {
        let mut p = PointMass::new();
        p.set([0.5, -0.3], [0.0, 0.0]);
        let r = p.step(&[0.0, 0.0]);
        assert_eq!(r.obs, vec![0.5, -0.3, 0.0, 0.0]);

        p.set([0.8, 0.0], [0.0, 0.0]);
        let mut prev = p.distance();
        for _ in 0..5 {
            let r = p.step(&[-1.0, 0.0]);
            assert!(-r.reward < prev);
            prev = -r.reward;
        }
    }

    #[test]
    fn pointmass_goal_start_terminates_immediately() {
        let mut p = PointMass::new();
        p.set([0.01, 0.0], [0.0, 0.0]);
        let r = p.step(&[0.0, 0.0]);
        assert!(r.terminated && !r.truncated);
    }

    #[test]
    fn state_round_trip() {
        let mut p = Pendulum::new();
        p.reset(1);
        p.step(&[0.5]);
        let s = p.state();
        let next = p.clone().step(&[0.1]);
        let mut q = Pendulum::new();
        q.restore(&s).unwrap();
        assert_eq!(q.step(&[0.1]), next);
        assert!(q.restore(&[1.0]).is_err());
        assert!(make_env("cartpole").is_err());
    }
}
