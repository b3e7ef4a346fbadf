//! Torque-controlled pendulum swing-up.
//!
//! The objective penalizes angle from upright, angular velocity, and control
//! effort every step, so per-step rewards lie in `[-16.2736044, 0]` and the
//! cumulative objective strictly decreases except at the exact upright rest
//! state. Episodes start from a seeded uniform draw over angle and angular
//! velocity, never terminate naturally, and run a 200-step horizon.

use rand::Rng;

use super::{Action, Environment, Step};
use crate::policy::Squash;
use crate::{from_f64, seeded_rng, Scalar};

/// Pendulum state: angle from upright in `(-pi, pi]` and angular velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumState<S> {
    /// Radians from the upright position; the boundary angle maps to `+pi`.
    pub theta: S,
    /// Angular velocity, clipped to `[-8, 8]`.
    pub omega: S,
}

/// The pendulum environment. Horizon 200, observation = (cos t, sin t, omega).
pub struct Pendulum<S> {
    state: PendulumState<S>,
    gravity: S,
    mass: S,
    length: S,
    dt: S,
    max_speed: S,
    max_torque: S,
}

/// Map an angle to its representative in `(-pi, pi]`; the two equivalent
/// boundary angles both map to `+pi` so downstream comparisons see one value.
fn normalize_angle<S: Scalar>(x: S) -> S {
    let pi = S::from_f64(std::f64::consts::PI).expect("pi");
    let two_pi = pi + pi;
    let mut r = (x + pi) % two_pi;
    if r < S::zero() {
        r = r + two_pi;
    }
    let shifted = r - pi;
    if shifted == -pi {
        pi
    } else {
        shifted
    }
}

impl<S: Scalar> Pendulum<S> {
    pub fn new() -> Self {
        Pendulum {
            state: PendulumState { theta: S::zero(), omega: S::zero() },
            gravity: from_f64(10.0),
            mass: from_f64(1.0),
            length: from_f64(1.0),
            dt: from_f64(0.05),
            max_speed: from_f64(8.0),
            max_torque: from_f64(2.0),
        }
    }

    /// Start an episode from an explicit state (used by tests and analyses).
    pub fn with_state(state: PendulumState<S>) -> Self {
        let mut env = Pendulum::<S>::new();
        env.state = PendulumState {
            theta: normalize_angle(state.theta),
            omega: clamp(state.omega, -env.max_speed, env.max_speed),
        };
        env
    }

    /// Current full state.
    pub fn state(&self) -> PendulumState<S> {
        self.state
    }

    fn observe(&self) -> Vec<S> {
        vec![self.state.theta.cos(), self.state.theta.sin(), self.state.omega]
    }
}

fn clamp<S: Scalar>(x: S, lo: S, hi: S) -> S {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

impl<S: Scalar> Default for Pendulum<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Environment<S> for Pendulum<S> {
    fn id(&self) -> String {
        "pendulum".to_string()
    }

    fn obs_dim(&self) -> usize {
        3
    }

    fn t_max(&self) -> usize {
        200
    }

    fn default_squash(&self) -> Squash<S> {
        Squash::ScaledTanh { scale: self.max_torque }
    }

    fn reset(&mut self, seed: u64) -> Vec<S> {
        // Seeded uniform draw over the full angle range and a modest speed
        // band — the common simulator convention for this task. Every
        // episode gets fresh starting luck, so a single episode's objective
        // is a noisy estimate of policy quality.
        let mut rng = seeded_rng(seed);
        let pi: S = from_f64(std::f64::consts::PI);
        let one: S = S::one();
        self.state = PendulumState {
            theta: normalize_angle(rng.gen_range(-pi..pi)),
            omega: rng.gen_range(-one..one),
        };
        self.observe()
    }

    fn step(&mut self, action: Action<S>) -> Step<S> {
        let torque = match action {
            Action::Torque(u) => clamp(u, -self.max_torque, self.max_torque),
            other => panic!("pendulum takes torque actions, got {other:?}"),
        };

        let PendulumState { theta, omega } = self.state;
        // Cost of the state the torque is applied in, before integrating.
        let cost = theta * theta
            + from_f64::<S>(0.1) * omega * omega
            + from_f64::<S>(0.001) * torque * torque;

        let three: S = from_f64(3.0);
        let two: S = from_f64(2.0);
        let gravity_term = three * self.gravity / (two * self.length) * theta.sin();
        let torque_term = three / (self.mass * self.length * self.length) * torque;
        let omega_new = clamp(omega + (gravity_term + torque_term) * self.dt, -self.max_speed, self.max_speed);
        let theta_new = normalize_angle(theta + omega_new * self.dt);
        self.state = PendulumState { theta: theta_new, omega: omega_new };

        Step { observation: self.observe(), reward: -cost, natural_termination: false }
    }
}
