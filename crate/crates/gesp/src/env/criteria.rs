//! Problem-specific stopping criteria.
//!
//! These encode the kind of hand-written episode cutoffs practitioners bolt
//! onto individual tasks — "stop if the character stops moving", "stop if the
//! robot falls over", "stop if progress is slower than a floor rate". They
//! are pure functions of the trace prefix and the current observation, and
//! they compose with the generalized rule under the composite stopping
//! policy.

use crate::trace::StopCriterion;
use crate::Scalar;

/// A hand-written per-task cutoff, evaluated after every step.
#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSpecificCriterion<S> {
    /// Fires when the cumulative objective has not strictly increased over
    /// the last `window` steps (e.g. a platformer agent that stopped moving).
    NoProgress { window: usize },
    /// Fires when observation component `state_index` leaves `[low, high]`
    /// (e.g. a walker's torso height leaving its healthy band).
    HealthyBounds { state_index: usize, low: S, high: S },
    /// Fires when the cumulative objective at step `t` is at or below
    /// `rate * t` (e.g. minimum average forward speed).
    SpeedFloor { rate: S },
}

impl<S: Scalar> ProblemSpecificCriterion<S> {
    /// Identifier recorded in traces this criterion cuts short.
    pub fn id(&self) -> StopCriterion {
        match self {
            ProblemSpecificCriterion::NoProgress { .. } => StopCriterion::NoProgress,
            ProblemSpecificCriterion::HealthyBounds { .. } => StopCriterion::HealthyBounds,
            ProblemSpecificCriterion::SpeedFloor { .. } => StopCriterion::SpeedFloor,
        }
    }

    /// Decide whether to cut the episode given the cumulative objective
    /// curve so far (`trace_prefix[t - 1]` is the value after step `t`) and
    /// the observation after the latest step.
    pub fn fires(&self, trace_prefix: &[S], observation: &[S]) -> bool {
        let t = trace_prefix.len();
        assert!(t >= 1, "criteria are evaluated after a step, never before the first");
        match self {
            ProblemSpecificCriterion::NoProgress { window } => {
                assert!(*window >= 1, "a no-progress window must span at least one step");
                t > *window && trace_prefix[t - 1] <= trace_prefix[t - 1 - window]
            }
            ProblemSpecificCriterion::HealthyBounds { state_index, low, high } => {
                let value = observation[*state_index];
                value < *low || value > *high
            }
            ProblemSpecificCriterion::SpeedFloor { rate } => {
                let t_scalar = S::from_usize(t).expect("step index fits in scalar");
                trace_prefix[t - 1] <= *rate * t_scalar
            }
        }
    }
}
