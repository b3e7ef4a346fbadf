//! Linear observation-to-action policies.
//!
//! Direct policy search treats the policy as a flat parameter vector; this
//! module gives that vector one affine layer of meaning: `y = w . obs + b`,
//! squashed into the environment's action space. Every bundled task has one
//! action channel, so a policy on an `n`-dimensional observation has `n + 1`
//! parameters (weights then bias).

use crate::env::Action;
use crate::trace::ParamVector;
use crate::Scalar;

/// How the raw affine output is mapped into the action space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Squash<S> {
    /// Binary push by sign: negative goes left, everything else right.
    Sign,
    /// Smoothly bounded torque `scale * tanh(y)`, staying in `[-scale, scale]`.
    ScaledTanh { scale: S },
}

/// A single-channel linear policy.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPolicy<S> {
    weights: Vec<S>,
    bias: S,
    squash: Squash<S>,
}

impl<S: Scalar> LinearPolicy<S> {
    /// Number of parameters a policy needs on an `obs_dim`-dimensional task.
    pub fn param_count(obs_dim: usize) -> usize {
        obs_dim + 1
    }

    /// Unpack a flat parameter vector (weights first, bias last).
    pub fn from_params(params: &[S], squash: Squash<S>) -> Self {
        assert!(params.len() >= 2, "a policy needs at least one weight and a bias");
        let (weights, bias) = params.split_at(params.len() - 1);
        LinearPolicy { weights: weights.to_vec(), bias: bias[0], squash }
    }

    /// Repack into the flat layout `from_params` consumes.
    pub fn params(&self) -> ParamVector<S> {
        let mut flat = self.weights.clone();
        flat.push(self.bias);
        flat
    }

    /// Observation dimension this policy expects.
    pub fn obs_dim(&self) -> usize {
        self.weights.len()
    }

    /// Map an observation to an action. The squash keeps the action inside
    /// the environment's bounds by construction.
    pub fn act(&self, observation: &[S]) -> Action<S> {
        assert_eq!(
            observation.len(),
            self.weights.len(),
            "observation dimension does not match the policy"
        );
        let mut y = self.bias;
        for (w, x) in self.weights.iter().zip(observation) {
            y = y + *w * *x;
        }
        match self.squash {
            Squash::Sign => {
                if y < S::zero() {
                    Action::Left
                } else {
                    Action::Right
                }
            }
            Squash::ScaledTanh { scale } => Action::Torque(scale * y.tanh()),
        }
    }
}
