//! Benchmark environments with step-accumulated objectives.
//!
//! All environments share one contract: `reset(seed)` puts the environment in
//! a seeded initial state and returns the first observation; `step(action)`
//! advances one time step and returns the next observation, the step reward,
//! and whether the episode ended naturally. Environments are bit-deterministic
//! given `(seed, action sequence)` and never consult global state.

mod cartpole;
mod criteria;
mod pendulum;
mod ramp;

pub use cartpole::{CartPole, CartPoleState};
pub use criteria::ProblemSpecificCriterion;
pub use pendulum::{Pendulum, PendulumState};
pub use ramp::SyntheticRamp;

use crate::policy::Squash;
use crate::Scalar;

/// Action accepted by the bundled environments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Action<S> {
    /// Push the cart left.
    Left,
    /// Push the cart right.
    Right,
    /// Apply a torque; environments clamp it to their own bounds.
    Torque(S),
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step<S> {
    /// Observation after the step.
    pub observation: Vec<S>,
    /// Reward earned by the step.
    pub reward: S,
    /// True iff the environment itself ended the episode on this step.
    pub natural_termination: bool,
}

/// A benchmark task evaluated episode by episode.
pub trait Environment<S: Scalar>: Send {
    /// Registry id, e.g. `"cartpole"` or `"ramp:-10:100"`.
    fn id(&self) -> String;
    /// Length of observation vectors.
    fn obs_dim(&self) -> usize;
    /// Episode horizon: evaluations never run longer than this many steps.
    fn t_max(&self) -> usize;
    /// The action squash a linear policy should use on this task.
    fn default_squash(&self) -> Squash<S>;
    /// Start a fresh episode from a seeded initial state.
    fn reset(&mut self, seed: u64) -> Vec<S>;
    /// Advance one step. Panics if the episode already terminated naturally;
    /// the caller owns the horizon, so `t_max` is not enforced here.
    fn step(&mut self, action: Action<S>) -> Step<S>;
}

/// Errors from environment construction.
#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("unknown environment id '{0}' (expected cartpole, pendulum, or ramp:<reward>:<tmax>)")]
    UnknownId(String),
    #[error("invalid ramp spec '{0}': {1}")]
    InvalidRampSpec(String, String),
}

/// Build an environment from its string id.
///
/// Known ids: `cartpole`, `pendulum`, and `ramp:<reward>:<tmax>` for a
/// synthetic constant-rate task (e.g. `ramp:-10:100`).
pub fn make_env<S: Scalar>(id: &str) -> Result<Box<dyn Environment<S>>, EnvError> {
    if id == "cartpole" {
        return Ok(Box::new(CartPole::new()));
    }
    if id == "pendulum" {
        return Ok(Box::new(Pendulum::new()));
    }
    if let Some(spec) = id.strip_prefix("ramp:") {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 2 {
            return Err(EnvError::InvalidRampSpec(
                id.to_string(),
                "expected ramp:<reward>:<tmax>".to_string(),
            ));
        }
        let reward: f64 = parts[0]
            .parse()
            .map_err(|e| EnvError::InvalidRampSpec(id.to_string(), format!("bad reward: {e}")))?;
        if !reward.is_finite() {
            return Err(EnvError::InvalidRampSpec(id.to_string(), "reward must be finite".to_string()));
        }
        let t_max: usize = parts[1]
            .parse()
            .map_err(|e| EnvError::InvalidRampSpec(id.to_string(), format!("bad tmax: {e}")))?;
        if t_max == 0 {
            return Err(EnvError::InvalidRampSpec(id.to_string(), "tmax must be at least 1".to_string()));
        }
        return Ok(Box::new(SyntheticRamp::new(crate::from_f64(reward), t_max)));
    }
    Err(EnvError::UnknownId(id.to_string()))
}
