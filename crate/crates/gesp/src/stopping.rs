//! The generalized early-stopping rule and the episode evaluation loop.
//!
//! The rule keeps the full per-step objective curve of the best solution
//! found so far. At step `t` of a candidate episode (past a grace period
//! `t_grace`), the candidate is cut when
//!
//! ```text
//! max(f[t](candidate), f[t - t_grace](candidate))
//!     < min(f[t](best), f[t - t_grace](best))
//! ```
//!
//! i.e. when even the better of its two bracketing values falls strictly
//! below the worse of the incumbent's. Comparing two points `t_grace` apart
//! makes the rule robust to non-monotone objectives: a candidate that is
//! momentarily behind survives as long as either endpoint of its bracket
//! still reaches the incumbent's bracket.
//!
//! Two guardrails keep the search sound:
//!
//! * only *fully evaluated* episodes may become the reference, so partial
//!   objectives never masquerade as incumbents, and
//! * before any full evaluation exists the reference is minus infinity
//!   everywhere, which can never win a strict comparison, so the first
//!   episode always runs to its natural end.

use crate::env::{Environment, ProblemSpecificCriterion};
use crate::policy::LinearPolicy;
use crate::trace::{
    pad_trace_to_full, BudgetClock, EpisodeTrace, EvaluationRecord, StopCriterion, Termination,
};
use crate::Scalar;

/// Grace period: the number of leading steps protected from stopping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraceConfig {
    t_grace: usize,
}

impl GraceConfig {
    /// Grace period as an explicit step count.
    pub fn from_steps(t_grace: usize) -> Self {
        GraceConfig { t_grace }
    }

    /// Grace period as a fraction of the horizon, rounded half-up to steps.
    /// A fraction of 1.0 disables stopping entirely; 0.0 allows stopping
    /// from the first step.
    pub fn from_fraction(fraction: f64, t_max: usize) -> Self {
        assert!(
            (0.0..=1.0).contains(&fraction),
            "grace fraction must lie in [0, 1], got {fraction}"
        );
        let t_grace = (fraction * t_max as f64 + 0.5).floor() as usize;
        GraceConfig { t_grace }
    }

    /// The grace period in steps.
    pub fn steps(&self) -> usize {
        self.t_grace
    }
}

/// Per-step objective curve of the best fully evaluated solution so far.
#[derive(Clone, Debug, PartialEq)]
pub struct BestReference<S> {
    ref_values: Vec<S>,
    best_full_objective: S,
}

impl<S: Scalar> BestReference<S> {
    /// A fresh reference: minus infinity everywhere, so nothing gets cut.
    pub fn new(t_max: usize) -> Self {
        assert!(t_max >= 1, "the reference needs a horizon of at least one step");
        BestReference {
            ref_values: vec![S::neg_infinity(); t_max],
            best_full_objective: S::neg_infinity(),
        }
    }

    /// Horizon length of the reference curve.
    pub fn t_max(&self) -> usize {
        self.ref_values.len()
    }

    /// Reference objective through step `t` (1-based).
    pub fn value_at(&self, t: usize) -> S {
        assert!(t >= 1 && t <= self.ref_values.len(), "step {t} outside the horizon");
        self.ref_values[t - 1]
    }

    /// Final objective of the incumbent best, minus infinity before any
    /// full evaluation finished.
    pub fn best_full_objective(&self) -> S {
        self.best_full_objective
    }

    /// Whether any fully evaluated solution has been adopted yet.
    pub fn has_incumbent(&self) -> bool {
        self.best_full_objective > S::neg_infinity()
    }

    /// Copy of this reference with [`MonotoneTransform`] applied to the
    /// curve, for use as the comparison side when candidates are judged on
    /// shifted values. Minus-infinity cells stay minus infinity, so a fresh
    /// reference still never cuts anything. The final-objective bookkeeping
    /// keeps raw values; only the per-step curve is shifted.
    pub fn shifted_copy(&self, transform: &MonotoneTransform<S>) -> Self {
        BestReference {
            ref_values: apply_monotone_transform(&self.ref_values, transform),
            best_full_objective: self.best_full_objective,
        }
    }
}

/// Decide whether to cut a candidate evaluation after step `t`.
///
/// `trace_prefix` holds the candidate's cumulative objective through step
/// `t` (so `trace_prefix.len() == t`). Strict comparison means a reference
/// still at minus infinity never stops anything.
pub fn should_stop<S: Scalar>(
    t: usize,
    trace_prefix: &[S],
    reference: &BestReference<S>,
    grace: &GraceConfig,
) -> bool {
    assert_eq!(t, trace_prefix.len(), "prefix must cover exactly steps 1..=t");
    assert!(t >= 1 && t <= reference.t_max(), "step {t} outside the horizon");
    let g = grace.steps();
    if t <= g {
        return false;
    }
    let candidate_now = trace_prefix[t - 1];
    let candidate_then = trace_prefix[t - 1 - g];
    let candidate_high = if candidate_now > candidate_then { candidate_now } else { candidate_then };
    let best_now = reference.value_at(t);
    let best_then = reference.value_at(t - g);
    let best_low = if best_now < best_then { best_now } else { best_then };
    candidate_high < best_low
}

/// Adopt a record as the new incumbent if it is fully evaluated and strictly
/// better than the current best. Returns whether the reference changed.
///
/// Early-stopped records are never adopted: their objectives are partial
/// lower bounds, and padding a partial curve would poison the reference.
/// Ties keep the earlier incumbent.
pub fn maybe_update_best<S: Scalar>(
    record: &EvaluationRecord<S>,
    reference: &mut BestReference<S>,
) -> bool {
    if !record.fully_evaluated {
        return false;
    }
    if record.reported_objective > reference.best_full_objective {
        reference.ref_values = pad_trace_to_full(&record.trace, reference.t_max());
        reference.best_full_objective = record.reported_objective;
        true
    } else {
        false
    }
}

/// Additive per-step objective reshaping `f[t] -> f[t] + t * k`.
///
/// Adding a constant `k` to every step reward is order-preserving on full
/// evaluations (every final objective shifts by the same `t_max * k`), and
/// with `k` above the largest per-step cost it makes any cumulative curve
/// monotone increasing — useful when a task's raw objective decreases over
/// time. Disabled by default; the benchmark tasks are run unshifted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotoneTransform<S> {
    /// Offset added to every step reward.
    pub k: S,
    /// Whether the transform is applied at all.
    pub enabled: bool,
}

impl<S: Scalar> Default for MonotoneTransform<S> {
    fn default() -> Self {
        MonotoneTransform { k: S::zero(), enabled: false }
    }
}

/// Apply the reshaping to a cumulative objective prefix. A disabled
/// transform is the identity.
pub fn apply_monotone_transform<S: Scalar>(
    trace_prefix: &[S],
    transform: &MonotoneTransform<S>,
) -> Vec<S> {
    if !transform.enabled {
        return trace_prefix.to_vec();
    }
    trace_prefix
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let t = S::from_usize(i + 1).expect("step index fits in scalar");
            value + t * transform.k
        })
        .collect()
}

/// When an evaluation may be cut short.
#[derive(Clone, Debug, PartialEq)]
pub enum StoppingPolicy<S> {
    /// Never stop: every episode runs to natural termination or the horizon.
    Standard,
    /// The generalized rule with the given grace period.
    Gesp(GraceConfig),
    /// Only hand-written per-task criteria.
    ProblemSpecific(Vec<ProblemSpecificCriterion<S>>),
    /// The generalized rule and per-task criteria side by side; the rule is
    /// consulted first, so simultaneous fires record the generalized rule.
    Composite { grace: GraceConfig, criteria: Vec<ProblemSpecificCriterion<S>> },
}

impl<S: Scalar> StoppingPolicy<S> {
    /// Which criterion, if any, cuts the episode after step `t`.
    fn check(
        &self,
        t: usize,
        trace_prefix: &[S],
        observation: &[S],
        reference: &BestReference<S>,
    ) -> Option<StopCriterion> {
        match self {
            StoppingPolicy::Standard => None,
            StoppingPolicy::Gesp(grace) => {
                should_stop(t, trace_prefix, reference, grace).then_some(StopCriterion::Gesp)
            }
            StoppingPolicy::ProblemSpecific(criteria) => criteria
                .iter()
                .find(|c| c.fires(trace_prefix, observation))
                .map(ProblemSpecificCriterion::id),
            StoppingPolicy::Composite { grace, criteria } => {
                if should_stop(t, trace_prefix, reference, grace) {
                    return Some(StopCriterion::Gesp);
                }
                criteria
                    .iter()
                    .find(|c| c.fires(trace_prefix, observation))
                    .map(ProblemSpecificCriterion::id)
            }
        }
    }
}

/// The run's budget ran dry mid-episode; the partial episode is discarded
/// (its steps stay spent, but no record is produced).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BudgetExhausted;

impl std::fmt::Display for BudgetExhausted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("step budget exhausted mid-episode; evaluation discarded")
    }
}

impl std::error::Error for BudgetExhausted {}

/// Run one seeded episode of `policy` on `env` under a stopping policy.
///
/// Steps are taken one at a time against the shared budget clock; if the
/// budget runs dry before the episode ends the evaluation is discarded.
/// Natural termination is checked before the stopping criteria: an episode
/// the environment itself ended has a *final* objective, so it counts as
/// fully evaluated even if a criterion would have fired on the same step.
pub fn evaluate_with_stopping<S: Scalar>(
    env: &mut dyn Environment<S>,
    policy: &LinearPolicy<S>,
    reference: &BestReference<S>,
    stopping: &StoppingPolicy<S>,
    clock: &mut BudgetClock,
    episode_seed: u64,
) -> Result<EvaluationRecord<S>, BudgetExhausted> {
    evaluate_with_stopping_shifted(
        env,
        policy,
        reference,
        stopping,
        &MonotoneTransform::default(),
        clock,
        episode_seed,
    )
}

/// [`evaluate_with_stopping`] with the candidate judged on reshaped values.
///
/// When the transform is enabled, the stopping criteria see the candidate's
/// *shifted* cumulative curve, so `reference` must be the matching shifted
/// copy (see [`BestReference::shifted_copy`]). The returned record always
/// carries the raw curve and raw objective — reshaping changes which episodes
/// get cut, never what a solution is worth. A disabled transform makes this
/// identical to [`evaluate_with_stopping`].
pub fn evaluate_with_stopping_shifted<S: Scalar>(
    env: &mut dyn Environment<S>,
    policy: &LinearPolicy<S>,
    reference: &BestReference<S>,
    stopping: &StoppingPolicy<S>,
    transform: &MonotoneTransform<S>,
    clock: &mut BudgetClock,
    episode_seed: u64,
) -> Result<EvaluationRecord<S>, BudgetExhausted> {
    let t_max = env.t_max();
    assert_eq!(reference.t_max(), t_max, "reference horizon must match the environment");
    assert_eq!(policy.obs_dim(), env.obs_dim(), "policy dimension must match the environment");

    let mut observation = env.reset(episode_seed);
    let mut cumulative: Vec<S> = Vec::with_capacity(t_max);
    // Shifted view of `cumulative`, maintained only when the transform is on.
    let mut judged: Vec<S> = Vec::with_capacity(if transform.enabled { t_max } else { 0 });
    let mut total = S::zero();

    let mut t = 0;
    let termination = loop {
        t += 1;
        if !clock.try_consume_step() {
            return Err(BudgetExhausted);
        }
        let step = env.step(policy.act(&observation));
        total = total + step.reward;
        cumulative.push(total);
        if transform.enabled {
            let step_index = S::from_usize(t).expect("step index fits in scalar");
            judged.push(total + step_index * transform.k);
        }
        observation = step.observation;

        if step.natural_termination {
            break Termination::NaturallyTerminated;
        }
        let judged_prefix = if transform.enabled { &judged } else { &cumulative };
        if let Some(criterion) = stopping.check(t, judged_prefix, &observation, reference) {
            break Termination::EarlyStopped(criterion);
        }
        if t == t_max {
            break Termination::Completed;
        }
    };

    Ok(EvaluationRecord::new(
        policy.params(),
        EpisodeTrace::new(cumulative, termination),
        clock.consumed(),
    ))
}
