//! Synthetic constant-rate environment for analytic stopping-rule scenarios.
//!
//! Every step pays the same reward regardless of action or seed, so the
//! cumulative objective is a straight line. Stopping-time arithmetic on
//! ramps can be checked in closed form.

use super::{Action, Environment, Step};
use crate::policy::Squash;
use crate::Scalar;

/// Environment paying `per_step` reward on each of up to `t_max` steps.
pub struct SyntheticRamp<S> {
    per_step: S,
    t_max: usize,
}

impl<S: Scalar> SyntheticRamp<S> {
    pub fn new(per_step: S, t_max: usize) -> Self {
        assert!(t_max >= 1, "a ramp needs a horizon of at least one step");
        SyntheticRamp { per_step, t_max }
    }

    /// The constant per-step reward.
    pub fn per_step(&self) -> S {
        self.per_step
    }
}

impl<S: Scalar> Environment<S> for SyntheticRamp<S> {
    fn id(&self) -> String {
        format!("ramp:{}:{}", self.per_step, self.t_max)
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn t_max(&self) -> usize {
        self.t_max
    }

    fn default_squash(&self) -> Squash<S> {
        Squash::Sign
    }

    /// The start state is fixed; the seed is deliberately ignored.
    fn reset(&mut self, _seed: u64) -> Vec<S> {
        vec![S::zero()]
    }

    /// Any action is accepted and ignored; the reward never varies.
    fn step(&mut self, _action: Action<S>) -> Step<S> {
        Step {
            observation: vec![S::zero()],
            reward: self.per_step,
            natural_termination: false,
        }
    }
}
