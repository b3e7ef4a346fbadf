//! Episode traces, evaluation records, and the shared step budget.
//!
//! An episode trace stores the *cumulative* objective after every step, so
//! `cumulative[t - 1]` is the objective the candidate would report if the
//! episode ended after step `t`. Early stopping works entirely on these
//! per-step curves.

use crate::Scalar;

/// Flat policy parameter vector, as asked from and told to the optimizer.
pub type ParamVector<S> = Vec<S>;

/// Which stopping criterion cut an evaluation short.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopCriterion {
    /// The generalized early-stopping rule (incumbent-best comparison).
    Gesp,
    /// No strict cumulative improvement over a trailing window.
    NoProgress,
    /// A watched state component left its healthy interval.
    HealthyBounds,
    /// Cumulative objective fell to or below a per-step floor.
    SpeedFloor,
}

impl std::fmt::Display for StopCriterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            StopCriterion::Gesp => "gesp",
            StopCriterion::NoProgress => "noprogress",
            StopCriterion::HealthyBounds => "bounds",
            StopCriterion::SpeedFloor => "speedfloor",
        };
        f.write_str(name)
    }
}

/// How an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Ran the full horizon without any criterion firing.
    Completed,
    /// The environment itself ended the episode (e.g. the pole fell). The
    /// objective is final, so the evaluation still counts as full.
    NaturallyTerminated,
    /// A stopping criterion cut the evaluation short; the recorded objective
    /// is partial.
    EarlyStopped(StopCriterion),
}

/// Per-step cumulative objective curve of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace<S> {
    /// `cumulative[t - 1]` is the objective accumulated through step `t`.
    pub cumulative: Vec<S>,
    /// Number of environment steps actually taken (equals `cumulative.len()`).
    pub steps_run: usize,
    /// How the episode ended.
    pub termination: Termination,
}

impl<S: Scalar> EpisodeTrace<S> {
    /// Build a trace from a cumulative curve, checking the length invariant.
    pub fn new(cumulative: Vec<S>, termination: Termination) -> Self {
        assert!(!cumulative.is_empty(), "an episode trace needs at least one step");
        let steps_run = cumulative.len();
        EpisodeTrace { cumulative, steps_run, termination }
    }

    /// Cumulative objective through step `t` (1-based).
    pub fn value_at(&self, t: usize) -> S {
        assert!(t >= 1 && t <= self.steps_run, "step {t} outside 1..={}", self.steps_run);
        self.cumulative[t - 1]
    }

    /// Objective after the last step taken — the value the episode reports.
    pub fn final_value(&self) -> S {
        *self.cumulative.last().expect("trace is never empty")
    }

    /// Whether the episode ran to a final objective (full horizon or natural
    /// termination), as opposed to being cut short.
    pub fn is_full(&self) -> bool {
        matches!(self.termination, Termination::Completed | Termination::NaturallyTerminated)
    }
}

/// Extend a fully evaluated trace to the full horizon by holding its final
/// value constant, e.g. a cart-pole episode that fell at step 120 of 500
/// contributes the value at 120 for steps 120..=500.
///
/// Panics if the trace was early-stopped: a partial objective has no final
/// value to hold, and padded partial curves must never become reference
/// curves.
pub fn pad_trace_to_full<S: Scalar>(trace: &EpisodeTrace<S>, t_max: usize) -> Vec<S> {
    assert!(
        trace.is_full(),
        "cannot pad an early-stopped trace ({:?}); only final objectives may be held constant",
        trace.termination
    );
    assert!(
        trace.steps_run <= t_max,
        "trace has {} steps but the horizon is {t_max}",
        trace.steps_run
    );
    let mut padded = Vec::with_capacity(t_max);
    padded.extend_from_slice(&trace.cumulative);
    padded.resize(t_max, trace.final_value());
    padded
}

/// One finished evaluation: the candidate, its trace, and what it reported.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationRecord<S> {
    /// Parameters of the evaluated policy.
    pub params: ParamVector<S>,
    /// The episode trace.
    pub trace: EpisodeTrace<S>,
    /// Objective handed to the optimizer: the trace's last cumulative value,
    /// partial if the episode was cut short.
    pub reported_objective: S,
    /// True iff the objective is final (full horizon or natural termination).
    pub fully_evaluated: bool,
    /// Total budget consumed across the whole run when this episode finished.
    pub budget_consumed_at_finish: u64,
}

impl<S: Scalar> EvaluationRecord<S> {
    /// Derive the record fields from a finished trace.
    pub fn new(params: ParamVector<S>, trace: EpisodeTrace<S>, budget_consumed_at_finish: u64) -> Self {
        let reported_objective = trace.final_value();
        let fully_evaluated = trace.is_full();
        EvaluationRecord { params, trace, reported_objective, fully_evaluated, budget_consumed_at_finish }
    }
}

/// Shared step budget of one experiment repetition.
///
/// Every environment step consumes exactly one unit; a step may never be
/// taken once the budget is used up.
#[derive(Clone, Debug)]
pub struct BudgetClock {
    consumed: u64,
    limit: u64,
}

impl BudgetClock {
    /// A fresh clock with `limit` steps available.
    pub fn new(limit: u64) -> Self {
        BudgetClock { consumed: 0, limit }
    }

    /// Steps consumed so far.
    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    /// Steps still available.
    pub fn remaining(&self) -> u64 {
        self.limit - self.consumed
    }

    /// Total budget.
    pub fn limit(&self) -> u64 {
        self.limit
    }

    /// Account for one environment step. Returns `false` (and consumes
    /// nothing) if the budget is already exhausted.
    pub fn try_consume_step(&mut self) -> bool {
        if self.consumed == self.limit {
            return false;
        }
        self.consumed += 1;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_trace(per_step: f64, steps: usize, termination: Termination) -> EpisodeTrace<f64> {
        let cumulative = (1..=steps).map(|t| per_step * t as f64).collect();
        EpisodeTrace::new(cumulative, termination)
    }

    #[test]
    fn trace_reports_its_last_cumulative_value() {
        let trace = EpisodeTrace::new(vec![1.0, 2.0, 3.0], Termination::NaturallyTerminated);
        assert_eq!(trace.steps_run, 3);
        assert_eq!(trace.final_value(), 3.0);
        assert_eq!(trace.value_at(1), 1.0);
        assert_eq!(trace.value_at(3), 3.0);
        assert!(trace.is_full());
    }

    #[test]
    fn padding_holds_the_final_value_to_the_horizon() {
        let trace = EpisodeTrace::new(vec![1.0, 2.0, 3.0], Termination::NaturallyTerminated);
        assert_eq!(pad_trace_to_full(&trace, 5), vec![1.0, 2.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn padding_a_full_length_trace_changes_nothing() {
        let trace = ramp_trace(-1.0, 4, Termination::Completed);
        assert_eq!(pad_trace_to_full(&trace, 4), trace.cumulative);
    }

    #[test]
    #[should_panic(expected = "cannot pad an early-stopped trace")]
    fn padding_an_early_stopped_trace_is_rejected() {
        let trace = ramp_trace(-1.0, 4, Termination::EarlyStopped(StopCriterion::Gesp));
        pad_trace_to_full(&trace, 10);
    }

    #[test]
    fn record_derives_reported_objective_and_eligibility() {
        let full = EvaluationRecord::new(vec![0.0], ramp_trace(2.0, 3, Termination::Completed), 3);
        assert_eq!(full.reported_objective, 6.0);
        assert!(full.fully_evaluated);

        let cut = EvaluationRecord::new(
            vec![0.0],
            ramp_trace(2.0, 2, Termination::EarlyStopped(StopCriterion::Gesp)),
            5,
        );
        assert_eq!(cut.reported_objective, 4.0);
        assert!(!cut.fully_evaluated);

        let natural = EvaluationRecord::new(vec![0.0], ramp_trace(1.0, 2, Termination::NaturallyTerminated), 7);
        assert!(natural.fully_evaluated);
    }

    #[test]
    fn budget_clock_never_oversteps_its_limit() {
        let mut clock = BudgetClock::new(2);
        assert_eq!(clock.remaining(), 2);
        assert!(clock.try_consume_step());
        assert!(clock.try_consume_step());
        assert!(!clock.try_consume_step(), "third step must be refused");
        assert_eq!(clock.consumed(), 2);
        assert_eq!(clock.remaining(), 0);
    }
}
