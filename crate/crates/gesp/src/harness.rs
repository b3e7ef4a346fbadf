//! Experiment runner: repeated seeded search runs under a step budget.
//!
//! One *run* is a full optimization: the search strategy proposes candidate
//! policies, each is evaluated as one environment episode under the active
//! stopping policy, and every consumed environment step counts against a
//! shared budget. The run records an attainment series — the best fully
//! evaluated objective as a function of consumed budget — sampled on a fixed
//! checkpoint grid so repetitions and experiment arms can be compared
//! pointwise.
//!
//! Everything is deterministic: repetition `r` of an experiment derives its
//! RNG stream from `mix_seed(base_seed, r)`, and episode `e` within the run
//! reseeds the environment with `mix_seed(run_seed, e)`. Repetitions are
//! independent, so the group runner executes them in parallel and the results
//! are identical for any worker count.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::cma::CmaEs;
use crate::env::{make_env, EnvError, ProblemSpecificCriterion};
use crate::policy::LinearPolicy;
use crate::stats::CheckpointSeries;
use crate::stopping::{
    evaluate_with_stopping_shifted, maybe_update_best, BestReference, GraceConfig,
    MonotoneTransform, StoppingPolicy,
};
use crate::trace::{BudgetClock, EvaluationRecord};
use crate::{mix_seed, seeded_rng, Scalar, SearchScalar};

/// Scalar-free description of one problem-specific stopping criterion, as it
/// appears in configs and manifests.
#[derive(Clone, Debug, PartialEq)]
pub enum CriterionSpec {
    /// Cut when the cumulative objective has not improved for `window` steps.
    NoProgress { window: usize },
    /// Cut when observation `state_index` leaves `[low, high]`.
    HealthyBounds { state_index: usize, low: f64, high: f64 },
    /// Cut when the cumulative objective falls to or below `rate * t`.
    SpeedFloor { rate: f64 },
}

impl CriterionSpec {
    /// Instantiate the criterion for a concrete scalar type.
    pub fn build<S: Scalar>(&self) -> ProblemSpecificCriterion<S> {
        match *self {
            CriterionSpec::NoProgress { window } => ProblemSpecificCriterion::NoProgress { window },
            CriterionSpec::HealthyBounds { state_index, low, high } => {
                ProblemSpecificCriterion::HealthyBounds {
                    state_index,
                    low: crate::from_f64(low),
                    high: crate::from_f64(high),
                }
            }
            CriterionSpec::SpeedFloor { rate } => {
                ProblemSpecificCriterion::SpeedFloor { rate: crate::from_f64(rate) }
            }
        }
    }
}

impl fmt::Display for CriterionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CriterionSpec::NoProgress { window } => write!(f, "noprogress={window}"),
            CriterionSpec::HealthyBounds { state_index, low, high } => {
                write!(f, "bounds={state_index},{low},{high}")
            }
            CriterionSpec::SpeedFloor { rate } => write!(f, "speedfloor={rate}"),
        }
    }
}

impl FromStr for CriterionSpec {
    type Err = HarnessError;

    fn from_str(text: &str) -> Result<Self, HarnessError> {
        let bad = |what: &str| HarnessError::InvalidStopping(format!("criterion `{text}`: {what}"));
        let (name, args) = text
            .split_once('=')
            .ok_or_else(|| bad("expected name=args, e.g. noprogress=50"))?;
        match name {
            "noprogress" => {
                let window: usize =
                    args.parse().map_err(|_| bad("window must be a positive integer"))?;
                if window == 0 {
                    return Err(bad("window must be at least 1"));
                }
                Ok(CriterionSpec::NoProgress { window })
            }
            "bounds" => {
                let parts: Vec<&str> = args.split(',').collect();
                if parts.len() != 3 {
                    return Err(bad("expected bounds=<state_index>,<low>,<high>"));
                }
                let state_index: usize =
                    parts[0].parse().map_err(|_| bad("state index must be an integer"))?;
                let low: f64 = parts[1].parse().map_err(|_| bad("low bound must be a number"))?;
                let high: f64 = parts[2].parse().map_err(|_| bad("high bound must be a number"))?;
                if !low.is_finite() || !high.is_finite() || low > high {
                    return Err(bad("bounds must be finite with low <= high"));
                }
                Ok(CriterionSpec::HealthyBounds { state_index, low, high })
            }
            "speedfloor" => {
                let rate: f64 = args.parse().map_err(|_| bad("rate must be a number"))?;
                if !rate.is_finite() {
                    return Err(bad("rate must be finite"));
                }
                Ok(CriterionSpec::SpeedFloor { rate })
            }
            other => Err(bad(&format!(
                "unknown criterion `{other}`; expected noprogress, bounds, or speedfloor"
            ))),
        }
    }
}

/// Scalar-free description of the stopping policy, as written in configs
/// (`standard`, `gesp`, `problem:<criteria>`, `composite[:<criteria>]`, with
/// criteria joined by `+`).
#[derive(Clone, Debug, PartialEq)]
pub enum StoppingSpec {
    /// Episodes always run to natural termination or the horizon.
    Standard,
    /// The generalized rule at the experiment's grace fraction.
    Gesp,
    /// Only hand-written per-task criteria.
    ProblemSpecific(Vec<CriterionSpec>),
    /// The generalized rule plus per-task criteria.
    Composite(Vec<CriterionSpec>),
}

impl StoppingSpec {
    /// Instantiate the runtime stopping policy for a concrete horizon.
    pub fn build<S: Scalar>(&self, t_max: usize, t_grace_fraction: f64) -> StoppingPolicy<S> {
        match self {
            StoppingSpec::Standard => StoppingPolicy::Standard,
            StoppingSpec::Gesp => {
                StoppingPolicy::Gesp(GraceConfig::from_fraction(t_grace_fraction, t_max))
            }
            StoppingSpec::ProblemSpecific(specs) => {
                StoppingPolicy::ProblemSpecific(specs.iter().map(CriterionSpec::build).collect())
            }
            StoppingSpec::Composite(specs) => StoppingPolicy::Composite {
                grace: GraceConfig::from_fraction(t_grace_fraction, t_max),
                criteria: specs.iter().map(CriterionSpec::build).collect(),
            },
        }
    }
}

impl fmt::Display for StoppingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |specs: &[CriterionSpec]| {
            specs.iter().map(ToString::to_string).collect::<Vec<_>>().join("+")
        };
        match self {
            StoppingSpec::Standard => f.write_str("standard"),
            StoppingSpec::Gesp => f.write_str("gesp"),
            StoppingSpec::ProblemSpecific(specs) => write!(f, "problem:{}", join(specs)),
            StoppingSpec::Composite(specs) if specs.is_empty() => f.write_str("composite"),
            StoppingSpec::Composite(specs) => write!(f, "composite:{}", join(specs)),
        }
    }
}

impl FromStr for StoppingSpec {
    type Err = HarnessError;

    fn from_str(text: &str) -> Result<Self, HarnessError> {
        let parse_criteria = |list: &str| -> Result<Vec<CriterionSpec>, HarnessError> {
            list.split('+').map(CriterionSpec::from_str).collect()
        };
        match text {
            "standard" => Ok(StoppingSpec::Standard),
            "gesp" => Ok(StoppingSpec::Gesp),
            "composite" => Ok(StoppingSpec::Composite(Vec::new())),
            _ => {
                if let Some(list) = text.strip_prefix("problem:") {
                    Ok(StoppingSpec::ProblemSpecific(parse_criteria(list)?))
                } else if let Some(list) = text.strip_prefix("composite:") {
                    Ok(StoppingSpec::Composite(parse_criteria(list)?))
                } else {
                    Err(HarnessError::InvalidStopping(format!(
                        "unknown stopping policy `{text}`; expected standard, gesp, \
                         problem:<criteria>, or composite[:<criteria>]"
                    )))
                }
            }
        }
    }
}

/// Full description of one experiment arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Environment id understood by the registry (e.g. `cartpole`,
    /// `pendulum`, `ramp:<reward>:<tmax>`).
    pub env_id: String,
    /// Stopping policy for every evaluation in the run.
    pub stopping: StoppingSpec,
    /// Grace period as a fraction of the horizon (used by `gesp` and
    /// `composite` stopping).
    pub t_grace_fraction: f64,
    /// Total environment steps available to each repetition.
    pub budget: u64,
    /// Number of independent repetitions.
    pub repetitions: usize,
    /// Base seed; repetition `r` derives its own stream from it.
    pub base_seed: u64,
    /// Number of evenly spaced budget checkpoints in the recorded series.
    pub sample_grid: usize,
    /// Identifier written to `runs.csv`; defaults to the environment id, so
    /// arms that differ only in stopping policy stay byte-comparable.
    pub experiment_id: Option<String>,
    /// Per-step objective offset for stop decisions (reshaping disabled when
    /// absent). Reported objectives are never shifted.
    pub reward_shift: Option<f64>,
}

impl ExperimentConfig {
    /// Config with the customary defaults: 30 repetitions, seed 0, a
    /// 100-point checkpoint grid, grace fraction 0.2, no reshaping.
    pub fn new(env_id: &str, stopping: StoppingSpec, budget: u64) -> Self {
        ExperimentConfig {
            env_id: env_id.to_string(),
            stopping,
            t_grace_fraction: 0.2,
            budget,
            repetitions: 30,
            base_seed: 0,
            sample_grid: 100,
            experiment_id: None,
            reward_shift: None,
        }
    }

    /// Identifier used in output files.
    pub fn experiment_id(&self) -> String {
        self.experiment_id.clone().unwrap_or_else(|| self.env_id.clone())
    }

    /// Check the config against the environment before any work happens.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let env = make_env::<f64>(&self.env_id)?;
        let t_max = env.t_max() as u64;
        if self.budget < t_max {
            return Err(HarnessError::BudgetTooSmall { budget: self.budget, t_max });
        }
        if !(0.0..=1.0).contains(&self.t_grace_fraction) {
            return Err(HarnessError::GraceFractionOutOfRange(self.t_grace_fraction));
        }
        if self.sample_grid == 0 {
            return Err(HarnessError::EmptyGrid);
        }
        if self.repetitions == 0 {
            return Err(HarnessError::NoRepetitions);
        }
        if let Some(k) = self.reward_shift {
            if !k.is_finite() {
                return Err(HarnessError::InvalidRewardShift(k));
            }
        }
        Ok(())
    }
}

/// Configuration or input-data problems surfaced by the runner.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("budget of {budget} steps cannot fit one episode ({t_max} steps)")]
    BudgetTooSmall { budget: u64, t_max: u64 },
    #[error("grace fraction {0} outside [0, 1]")]
    GraceFractionOutOfRange(f64),
    #[error("the checkpoint grid needs at least one point")]
    EmptyGrid,
    #[error("at least one repetition is required")]
    NoRepetitions,
    #[error("reward shift {0} must be finite")]
    InvalidRewardShift(f64),
    #[error("invalid stopping policy: {0}")]
    InvalidStopping(String),
}

/// State of one run at one budget checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointSample<S> {
    /// Budget (environment steps) this checkpoint represents.
    pub budget: u64,
    /// Best fully evaluated objective so far; `None` before the first full
    /// evaluation finished.
    pub best: Option<S>,
    /// Evaluations that consumed at least one step so far.
    pub evaluations_started: u64,
    /// Evaluations that ran to natural termination or the horizon so far.
    pub evaluations_full: u64,
}

/// Result of one repetition.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary<S> {
    /// Repetition index within the experiment.
    pub rep: usize,
    /// Total evaluations that consumed at least one step.
    pub evaluations_started: u64,
    /// Total evaluations that reached natural termination or the horizon.
    pub evaluations_full: u64,
    /// Environment steps actually consumed (at most the budget).
    pub steps_consumed: u64,
    /// Best fully evaluated objective of the whole run.
    pub final_best: Option<S>,
    /// The attainment series sampled on the checkpoint grid.
    pub checkpoints: Vec<CheckpointSample<S>>,
}

/// Evenly spaced budget checkpoints `budget * i / grid` for `i = 1..=grid`
/// (integer arithmetic; the last checkpoint is exactly the budget).
pub fn checkpoint_budgets(budget: u64, grid: usize) -> Vec<u64> {
    assert!(grid >= 1, "the checkpoint grid needs at least one point");
    (1..=grid as u64).map(|i| ((budget as u128 * i as u128) / grid as u128) as u64).collect()
}

/// Progress snapshot after one evaluation attempt.
struct ProgressEvent<S> {
    consumed: u64,
    best: Option<S>,
    started: u64,
    full: u64,
}

fn best_of<S: Scalar>(reference: &BestReference<S>) -> Option<S> {
    reference.has_incumbent().then(|| reference.best_full_objective())
}

/// Run one repetition, passing every finished evaluation to `observer` in
/// evaluation order (budget-truncated partial attempts produce no record).
fn run_single_impl<S: SearchScalar>(
    config: &ExperimentConfig,
    rep: usize,
    observer: &mut dyn FnMut(&EvaluationRecord<S>),
) -> Result<RunSummary<S>, HarnessError> {
    config.validate()?;
    let mut env = make_env::<S>(&config.env_id)?;
    let t_max = env.t_max();
    let squash = env.default_squash();
    let stopping: StoppingPolicy<S> = config.stopping.build(t_max, config.t_grace_fraction);
    let transform = match config.reward_shift {
        Some(k) => MonotoneTransform { k: crate::from_f64(k), enabled: true },
        None => MonotoneTransform::default(),
    };

    let run_seed = mix_seed(config.base_seed, rep as u64);
    let mut rng = seeded_rng(run_seed);
    let mut strategy = CmaEs::<S>::new(LinearPolicy::<S>::param_count(env.obs_dim()));
    let mut clock = BudgetClock::new(config.budget);
    let mut reference = BestReference::new(t_max);
    // The comparison side of the stop rule; tracks `reference` when the
    // transform is off, or its shifted copy when on.
    let mut stop_reference = if transform.enabled { reference.shifted_copy(&transform) } else { reference.clone() };

    let mut events: Vec<ProgressEvent<S>> = Vec::new();
    let mut started = 0u64;
    let mut full = 0u64;
    let mut eval_index = 0u64;

    'run: loop {
        let candidates = strategy.ask(&mut rng);
        let mut fitnesses = Vec::with_capacity(candidates.len());
        for candidate in &candidates {
            let policy = LinearPolicy::from_params(candidate, squash);
            let episode_seed = mix_seed(run_seed, eval_index);
            let consumed_before = clock.consumed();
            match evaluate_with_stopping_shifted(
                env.as_mut(),
                &policy,
                &stop_reference,
                &stopping,
                &transform,
                &mut clock,
                episode_seed,
            ) {
                Ok(record) => {
                    eval_index += 1;
                    started += 1;
                    if record.fully_evaluated {
                        full += 1;
                    }
                    if maybe_update_best(&record, &mut reference) {
                        stop_reference = if transform.enabled {
                            reference.shifted_copy(&transform)
                        } else {
                            reference.clone()
                        };
                    }
                    observer(&record);
                    // The optimizer ranks the reported objective as-is, full
                    // or partial; stopped candidates get no sentinel and no
                    // correction.
                    fitnesses.push(record.reported_objective);
                    if let Some(last) = events.last() {
                        if let (Some(prev), Some(now)) = (last.best, best_of(&reference)) {
                            assert!(now >= prev, "attainment series must be nondecreasing");
                        }
                    }
                    events.push(ProgressEvent {
                        consumed: clock.consumed(),
                        best: best_of(&reference),
                        started,
                        full,
                    });
                }
                Err(_) => {
                    // Budget ran dry. A partial attempt that consumed steps
                    // still counts as started; its steps stay spent.
                    if clock.consumed() > consumed_before {
                        started += 1;
                        events.push(ProgressEvent {
                            consumed: clock.consumed(),
                            best: best_of(&reference),
                            started,
                            full,
                        });
                    }
                    break 'run;
                }
            }
        }
        strategy.tell(&candidates, &fitnesses);
    }

    let budgets = checkpoint_budgets(config.budget, config.sample_grid);
    let mut checkpoints = Vec::with_capacity(budgets.len());
    let mut state = CheckpointSample { budget: 0, best: None, evaluations_started: 0, evaluations_full: 0 };
    let mut next_event = 0;
    for budget in budgets {
        while next_event < events.len() && events[next_event].consumed <= budget {
            let event = &events[next_event];
            state.best = event.best;
            state.evaluations_started = event.started;
            state.evaluations_full = event.full;
            next_event += 1;
        }
        state.budget = budget;
        checkpoints.push(state.clone());
    }

    Ok(RunSummary {
        rep,
        evaluations_started: started,
        evaluations_full: full,
        steps_consumed: clock.consumed(),
        final_best: best_of(&reference),
        checkpoints,
    })
}

/// Run one repetition of the experiment.
pub fn run_single<S: SearchScalar>(
    config: &ExperimentConfig,
    rep: usize,
) -> Result<RunSummary<S>, HarnessError> {
    run_single_impl(config, rep, &mut |_| {})
}

/// Run one repetition and also return every finished evaluation record in
/// order — the raw material for trace archives and equivalence checks.
pub fn run_single_detailed<S: SearchScalar>(
    config: &ExperimentConfig,
    rep: usize,
) -> Result<(RunSummary<S>, Vec<EvaluationRecord<S>>), HarnessError> {
    let mut records = Vec::new();
    let summary = run_single_impl(config, rep, &mut |record| records.push(record.clone()))?;
    Ok((summary, records))
}

/// Run all repetitions (in parallel when a multi-threaded rayon pool is
/// active). Results are in repetition order and identical for any worker
/// count, because repetitions share no mutable state.
pub fn run_group<S: SearchScalar>(config: &ExperimentConfig) -> Result<Vec<RunSummary<S>>, HarnessError> {
    config.validate()?;
    (0..config.repetitions)
        .into_par_iter()
        .map(|rep| run_single(config, rep))
        .collect()
}

/// Ratio of median `evaluations_started` between two groups at each shared
/// checkpoint. Checkpoints where the denominator group's median is zero are
/// omitted with a warning — no evaluation has finished there yet, so the
/// ratio is undefined.
pub fn evaluation_ratio<S: Scalar>(
    numerator_group: &[RunSummary<S>],
    denominator_group: &[RunSummary<S>],
) -> Vec<(u64, f64)> {
    assert!(!numerator_group.is_empty() && !denominator_group.is_empty(), "both groups need runs");
    let budgets: Vec<u64> = numerator_group[0].checkpoints.iter().map(|c| c.budget).collect();
    for summary in numerator_group.iter().chain(denominator_group.iter()) {
        let other: Vec<u64> = summary.checkpoints.iter().map(|c| c.budget).collect();
        assert_eq!(other, budgets, "checkpoint grids must be aligned");
    }
    let started = |group: &[RunSummary<S>], i: usize| -> Vec<f64> {
        group.iter().map(|s| s.checkpoints[i].evaluations_started as f64).collect()
    };
    let mut ratios = Vec::with_capacity(budgets.len());
    for (i, &budget) in budgets.iter().enumerate() {
        let numerator = crate::stats::median(&started(numerator_group, i));
        let denominator = crate::stats::median(&started(denominator_group, i));
        if denominator == 0.0 {
            log::warn!("checkpoint {budget}: denominator group has no evaluations yet; ratio omitted");
            continue;
        }
        ratios.push((budget, numerator / denominator));
    }
    ratios
}

/// Extract the per-run best-objective series, aligned to the checkpoint
/// grid, for the pointwise statistics.
pub fn best_series<S: Scalar>(group: &[RunSummary<S>]) -> Vec<CheckpointSeries<S>> {
    group.iter().map(|s| s.checkpoints.iter().map(|c| c.best).collect()).collect()
}

/// Checkpoint budgets shared by a group (asserted aligned elsewhere).
pub fn group_budgets<S: Scalar>(group: &[RunSummary<S>]) -> Vec<u64> {
    assert!(!group.is_empty(), "empty group");
    group[0].checkpoints.iter().map(|c| c.budget).collect()
}

const RUNS_CSV_HEADER: &str =
    "experiment_id,rep,checkpoint_budget,best_objective,evaluations_started,evaluations_full";

/// Serialize a group of runs to the `runs.csv` format: one row per
/// (repetition, checkpoint), best objective empty until the first full
/// evaluation.
pub fn runs_csv_string<S: Scalar>(experiment_id: &str, group: &[RunSummary<S>]) -> String {
    let mut out = String::from(RUNS_CSV_HEADER);
    out.push('\n');
    for summary in group {
        for sample in &summary.checkpoints {
            let _ = write!(out, "{},{},{},", experiment_id, summary.rep, sample.budget);
            if let Some(best) = sample.best {
                let _ = write!(out, "{best}");
            }
            let _ = writeln!(out, ",{},{}", sample.evaluations_started, sample.evaluations_full);
        }
    }
    out
}

/// Write `runs.csv` for a group of runs.
pub fn write_runs_csv<S: Scalar>(
    path: &Path,
    experiment_id: &str,
    group: &[RunSummary<S>],
) -> io::Result<()> {
    fs::write(path, runs_csv_string(experiment_id, group))
}

/// One repetition read back from `runs.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedRun {
    pub rep: u64,
    pub best: Vec<Option<f64>>,
    pub evaluations_started: Vec<u64>,
    pub evaluations_full: Vec<u64>,
}

/// A whole `runs.csv` file read back.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedRuns {
    pub experiment_id: String,
    pub checkpoints: Vec<u64>,
    pub runs: Vec<ParsedRun>,
}

impl ParsedRuns {
    /// Best-objective series per run, for the pointwise statistics.
    pub fn best_series(&self) -> Vec<CheckpointSeries<f64>> {
        self.runs.iter().map(|r| r.best.clone()).collect()
    }

    /// Synthetic summaries carrying just enough structure for
    /// [`evaluation_ratio`].
    pub fn to_summaries(&self) -> Vec<RunSummary<f64>> {
        self.runs
            .iter()
            .map(|run| {
                let checkpoints = self
                    .checkpoints
                    .iter()
                    .enumerate()
                    .map(|(i, &budget)| CheckpointSample {
                        budget,
                        best: run.best[i],
                        evaluations_started: run.evaluations_started[i],
                        evaluations_full: run.evaluations_full[i],
                    })
                    .collect::<Vec<_>>();
                RunSummary {
                    rep: run.rep as usize,
                    evaluations_started: *run.evaluations_started.last().unwrap_or(&0),
                    evaluations_full: *run.evaluations_full.last().unwrap_or(&0),
                    steps_consumed: 0,
                    final_best: run.best.last().cloned().flatten(),
                    checkpoints,
                }
            })
            .collect()
    }
}

/// Problems reading a `runs.csv` file back.
#[derive(Debug, Error)]
pub enum RunsCsvError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("runs.csv line {line}: {what}")]
    Malformed { line: usize, what: String },
}

/// Parse the `runs.csv` format produced by [`write_runs_csv`]. Rows must be
/// grouped by repetition and every repetition must cover the same checkpoint
/// grid.
pub fn parse_runs_csv(text: &str) -> Result<ParsedRuns, RunsCsvError> {
    let malformed = |line: usize, what: &str| RunsCsvError::Malformed { line, what: what.to_string() };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| malformed(1, "empty file"))?;
    if header != RUNS_CSV_HEADER {
        return Err(malformed(1, "unexpected header"));
    }

    let mut experiment_id: Option<String> = None;
    let mut checkpoints: Vec<u64> = Vec::new();
    let mut runs: Vec<ParsedRun> = Vec::new();
    for (index, line) in lines {
        let line_no = index + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(malformed(line_no, "expected 6 fields"));
        }
        let id = fields[0];
        match &experiment_id {
            None => experiment_id = Some(id.to_string()),
            Some(seen) if seen != id => {
                return Err(malformed(line_no, "multiple experiment ids in one file"))
            }
            _ => {}
        }
        let rep: u64 =
            fields[1].parse().map_err(|_| malformed(line_no, "rep must be an integer"))?;
        let budget: u64 = fields[2]
            .parse()
            .map_err(|_| malformed(line_no, "checkpoint_budget must be an integer"))?;
        let best: Option<f64> = if fields[3].is_empty() {
            None
        } else {
            Some(fields[3].parse().map_err(|_| malformed(line_no, "best_objective must be a number"))?)
        };
        let started: u64 = fields[4]
            .parse()
            .map_err(|_| malformed(line_no, "evaluations_started must be an integer"))?;
        let full: u64 = fields[5]
            .parse()
            .map_err(|_| malformed(line_no, "evaluations_full must be an integer"))?;

        let start_new = match runs.last() {
            Some(last) => last.rep != rep,
            None => true,
        };
        if start_new {
            runs.push(ParsedRun {
                rep,
                best: Vec::new(),
                evaluations_started: Vec::new(),
                evaluations_full: Vec::new(),
            });
        }
        let on_first_run = runs.len() == 1;
        let run = runs.last_mut().expect("just ensured");
        let slot = run.best.len();
        if on_first_run {
            // The first repetition defines the checkpoint grid.
            checkpoints.push(budget);
        } else {
            match checkpoints.get(slot) {
                Some(&expected) if expected == budget => {}
                Some(_) => {
                    return Err(malformed(line_no, "checkpoint grids differ between repetitions"))
                }
                None => {
                    return Err(malformed(line_no, "row beyond the first run's checkpoint grid"))
                }
            }
        }
        run.best.push(best);
        run.evaluations_started.push(started);
        run.evaluations_full.push(full);
    }

    if checkpoints.is_empty() {
        return Err(malformed(2, "no data rows"));
    }
    for run in &runs {
        if run.best.len() != checkpoints.len() {
            return Err(RunsCsvError::Malformed {
                line: 0,
                what: format!(
                    "repetition {} covers {} checkpoints, expected {}",
                    run.rep,
                    run.best.len(),
                    checkpoints.len()
                ),
            });
        }
    }
    Ok(ParsedRuns { experiment_id: experiment_id.expect("had data rows"), checkpoints, runs })
}

/// Read and parse a `runs.csv` file.
pub fn read_runs_csv(path: &Path) -> Result<ParsedRuns, RunsCsvError> {
    parse_runs_csv(&fs::read_to_string(path)?)
}

/// Write evaluation-ratio points as `ratio.csv`.
pub fn write_ratio_csv(path: &Path, points: &[(u64, f64)]) -> io::Result<()> {
    let mut out = String::from("checkpoint_budget,ratio\n");
    for (budget, ratio) in points {
        let _ = writeln!(out, "{budget},{ratio}");
    }
    fs::write(path, out)
}

/// One grace fraction's worth of runs in a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint<S> {
    pub fraction: f64,
    pub summaries: Vec<RunSummary<S>>,
}

/// Run the experiment once per grace fraction, with the stopping policy
/// forced to the generalized rule at that fraction.
pub fn sweep_tgrace<S: SearchScalar>(
    config: &ExperimentConfig,
    fractions: &[f64],
) -> Result<Vec<SweepPoint<S>>, HarnessError> {
    assert!(!fractions.is_empty(), "sweep needs at least one fraction");
    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mut arm = config.clone();
        arm.stopping = StoppingSpec::Gesp;
        arm.t_grace_fraction = fraction;
        points.push(SweepPoint { fraction, summaries: run_group(&arm)? });
    }
    Ok(points)
}

/// Write per-repetition final objectives of a sweep as `sweep.csv`.
pub fn write_sweep_csv<S: Scalar>(path: &Path, points: &[SweepPoint<S>]) -> io::Result<()> {
    let mut out = String::from("grace_fraction,rep,final_best\n");
    for point in points {
        for summary in &point.summaries {
            let _ = write!(out, "{},{},", point.fraction, summary.rep);
            match summary.final_best {
                Some(best) => {
                    let _ = writeln!(out, "{best}");
                }
                None => out.push('\n'),
            }
        }
    }
    fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stopping::{evaluate_with_stopping, should_stop};
    use crate::trace::Termination;
    use crate::Real;

    fn pendulum_config(budget: u64) -> ExperimentConfig {
        let mut config = ExperimentConfig::new("pendulum", StoppingSpec::Gesp, budget);
        config.repetitions = 2;
        config.sample_grid = 10;
        config
    }

    #[test]
    fn a_budget_of_one_episode_runs_exactly_one_full_evaluation() {
        let mut config = ExperimentConfig::new("pendulum", StoppingSpec::Standard, 200);
        config.repetitions = 1;
        config.sample_grid = 4;
        let summary = run_single::<Real>(&config, 0).expect("run");
        assert_eq!(summary.evaluations_started, 1);
        assert_eq!(summary.evaluations_full, 1);
        assert_eq!(summary.steps_consumed, 200);
        assert!(summary.final_best.is_some());
        // The single evaluation lands exactly on the final checkpoint.
        assert_eq!(summary.checkpoints.len(), 4);
        assert_eq!(summary.checkpoints[2].evaluations_started, 0);
        assert_eq!(summary.checkpoints[2].best, None);
        assert_eq!(summary.checkpoints[3].budget, 200);
        assert_eq!(summary.checkpoints[3].evaluations_started, 1);
        assert_eq!(summary.checkpoints[3].best, summary.final_best);
    }

    #[test]
    fn steady_state_evaluation_ratio_matches_the_steps_per_evaluation_quotient() {
        // Against an incumbent gaining +1 per step, a candidate losing 10 per
        // step is cut at the first post-grace step (t = 21): its bracket max
        // is already below the incumbent's bracket min. Standard evaluation
        // spends 100 steps per candidate, the rule spends 21, so with the
        // same budget the started-evaluation counts sit at 100:21.
        let t_max = 100;
        let budget = 2_100u64;
        let reference = {
            let mut env = make_env::<f64>(&format!("ramp:1:{t_max}")).unwrap();
            let mut reference = BestReference::new(t_max);
            let mut clock = BudgetClock::new(t_max as u64);
            let record = evaluate_with_stopping(
                env.as_mut(),
                &LinearPolicy::from_params(&[0.0, 0.0], crate::policy::Squash::Sign),
                &reference,
                &StoppingPolicy::Standard,
                &mut clock,
                0,
            )
            .unwrap();
            assert!(maybe_update_best(&record, &mut reference));
            reference
        };

        let count_started = |stopping: StoppingPolicy<f64>| -> (u64, usize) {
            let mut env = make_env::<f64>("ramp:-10:100").unwrap();
            let mut clock = BudgetClock::new(budget);
            let mut started = 0;
            let mut last_steps = 0;
            loop {
                let before = clock.consumed();
                match evaluate_with_stopping(
                    env.as_mut(),
                    &LinearPolicy::from_params(&[0.0, 0.0], crate::policy::Squash::Sign),
                    &reference,
                    &stopping,
                    &mut clock,
                    started,
                ) {
                    Ok(record) => {
                        started += 1;
                        last_steps = record.trace.steps_run;
                    }
                    Err(_) => {
                        if clock.consumed() > before {
                            started += 1;
                        }
                        break;
                    }
                }
            }
            (started, last_steps)
        };

        let (standard_started, standard_steps) = count_started(StoppingPolicy::Standard);
        let (gesp_started, gesp_steps) =
            count_started(StoppingPolicy::Gesp(GraceConfig::from_steps(20)));
        assert_eq!(standard_steps, 100);
        assert_eq!(gesp_steps, 21, "cut at the first step past the grace period");
        assert_eq!(standard_started, 21);
        assert_eq!(gesp_started, 100);
        let ratio = gesp_started as f64 / standard_started as f64;
        assert!((ratio - 100.0 / 21.0).abs() < 0.05, "ratio {ratio} far from 100/21");
    }

    #[test]
    fn identical_groups_have_ratio_one_everywhere() {
        let config = pendulum_config(600);
        let group = run_group::<Real>(&config).expect("group");
        let ratios = evaluation_ratio(&group, &group);
        assert!(!ratios.is_empty());
        for (_, ratio) in ratios {
            assert_eq!(ratio, 1.0);
        }
    }

    #[test]
    fn ratio_omits_checkpoints_with_a_zero_denominator_median() {
        let config = pendulum_config(600);
        let group = run_group::<Real>(&config).expect("group");
        // Early checkpoints (budget < 200 steps) precede the first finished
        // evaluation, so the denominator median is zero there.
        let ratios = evaluation_ratio(&group, &group);
        let budgets = group_budgets(&group);
        assert!(ratios.len() < budgets.len(), "early checkpoints must be omitted");
        assert!(ratios.iter().all(|(b, _)| *b >= 200));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let config = pendulum_config(600);
        let once = runs_csv_string("pendulum", &run_group::<Real>(&config).expect("group"));
        let twice = runs_csv_string("pendulum", &run_group::<Real>(&config).expect("group"));
        assert_eq!(once, twice);
    }

    #[test]
    fn cartpole_rule_and_standard_arms_are_identical() {
        // Survival rewards mean a live candidate is never strictly behind
        // the incumbent, so the rule never fires and the arms match.
        let mut gesp = ExperimentConfig::new("cartpole", StoppingSpec::Gesp, 3_000);
        gesp.repetitions = 2;
        gesp.sample_grid = 10;
        let mut standard = gesp.clone();
        standard.stopping = StoppingSpec::Standard;
        let left = run_group::<Real>(&gesp).expect("gesp group");
        let right = run_group::<Real>(&standard).expect("standard group");
        assert_eq!(left, right);
        assert_eq!(
            runs_csv_string("cartpole", &left),
            runs_csv_string("cartpole", &right),
            "serialized output must be byte-identical"
        );
    }

    #[test]
    fn grace_fraction_one_matches_standard_stopping_exactly() {
        let mut config = pendulum_config(600);
        config.base_seed = 7;
        let sweep = sweep_tgrace::<Real>(&config, &[1.0]).expect("sweep");
        let mut standard = config.clone();
        standard.stopping = StoppingSpec::Standard;
        let baseline = run_group::<Real>(&standard).expect("standard");
        assert_eq!(sweep[0].summaries, baseline);
    }

    #[test]
    fn runs_csv_round_trips_through_the_parser() {
        let config = pendulum_config(600);
        let group = run_group::<Real>(&config).expect("group");
        let text = runs_csv_string("pendulum", &group);
        let parsed = parse_runs_csv(&text).expect("parse");
        assert_eq!(parsed.experiment_id, "pendulum");
        assert_eq!(parsed.checkpoints, group_budgets(&group));
        assert_eq!(parsed.runs.len(), group.len());
        for (run, summary) in parsed.runs.iter().zip(&group) {
            assert_eq!(run.rep, summary.rep as u64);
            for (i, sample) in summary.checkpoints.iter().enumerate() {
                assert_eq!(run.best[i], sample.best);
                assert_eq!(run.evaluations_started[i], sample.evaluations_started);
                assert_eq!(run.evaluations_full[i], sample.evaluations_full);
            }
        }
        // The reconstructed summaries drive the same ratio computation.
        let summaries = parsed.to_summaries();
        let ratios = evaluation_ratio(&summaries, &summaries);
        assert!(ratios.iter().all(|(_, r)| *r == 1.0));
    }

    #[test]
    fn runs_csv_writer_emits_the_exact_expected_bytes() {
        let group = vec![RunSummary::<f64> {
            rep: 0,
            evaluations_started: 3,
            evaluations_full: 2,
            steps_consumed: 40,
            final_best: Some(-12.5),
            checkpoints: vec![
                CheckpointSample { budget: 20, best: None, evaluations_started: 1, evaluations_full: 0 },
                CheckpointSample {
                    budget: 40,
                    best: Some(-12.5),
                    evaluations_started: 3,
                    evaluations_full: 2,
                },
            ],
        }];
        assert_eq!(
            runs_csv_string("ramp:-1:20", &group),
            "experiment_id,rep,checkpoint_budget,best_objective,evaluations_started,evaluations_full\n\
             ramp:-1:20,0,20,,1,0\n\
             ramp:-1:20,0,40,-12.5,3,2\n"
        );
    }

    #[test]
    fn parser_rejects_mismatched_grids_and_bad_headers() {
        let bad_header = "a,b\n1,2\n";
        assert!(matches!(parse_runs_csv(bad_header), Err(RunsCsvError::Malformed { line: 1, .. })));

        let mismatch = "experiment_id,rep,checkpoint_budget,best_objective,evaluations_started,evaluations_full\n\
                        x,0,10,,1,1\n\
                        x,1,20,,1,1\n";
        assert!(parse_runs_csv(mismatch).is_err());
    }

    #[test]
    fn stopping_specs_parse_and_print_symmetrically() {
        let cases = [
            "standard",
            "gesp",
            "composite",
            "problem:noprogress=50",
            "problem:bounds=0,-2.4,2.4+speedfloor=-0.5",
            "composite:noprogress=3",
        ];
        for text in cases {
            let spec: StoppingSpec = text.parse().expect(text);
            assert_eq!(spec.to_string(), text);
        }
        assert!("problem:".parse::<StoppingSpec>().is_err());
        assert!("gespp".parse::<StoppingSpec>().is_err());
        assert!("problem:noprogress=0".parse::<StoppingSpec>().is_err());
        assert!("problem:bounds=0,3,1".parse::<StoppingSpec>().is_err());
    }

    #[test]
    fn built_policies_match_their_specs() {
        let spec: StoppingSpec = "composite:speedfloor=-2".parse().unwrap();
        match spec.build::<f64>(100, 0.2) {
            StoppingPolicy::Composite { grace, criteria } => {
                assert_eq!(grace.steps(), 20);
                assert_eq!(criteria.len(), 1);
            }
            other => panic!("expected composite policy, got {other:?}"),
        }
        // The built grace matches what the rule itself would use.
        let reference = BestReference::<f64>::new(100);
        assert!(!should_stop(1, &[0.0], &reference, &GraceConfig::from_fraction(0.2, 100)));
    }

    #[test]
    fn invalid_configs_are_rejected_before_any_work() {
        let too_small = ExperimentConfig::new("pendulum", StoppingSpec::Standard, 10);
        assert!(matches!(too_small.validate(), Err(HarnessError::BudgetTooSmall { .. })));

        let mut bad_fraction = ExperimentConfig::new("pendulum", StoppingSpec::Gesp, 400);
        bad_fraction.t_grace_fraction = 1.5;
        assert!(matches!(bad_fraction.validate(), Err(HarnessError::GraceFractionOutOfRange(_))));

        let unknown = ExperimentConfig::new("mountaincar", StoppingSpec::Standard, 400);
        assert!(matches!(unknown.validate(), Err(HarnessError::Env(_))));

        let mut no_reps = ExperimentConfig::new("pendulum", StoppingSpec::Standard, 400);
        no_reps.repetitions = 0;
        assert!(matches!(no_reps.validate(), Err(HarnessError::NoRepetitions)));
    }

    #[test]
    fn detailed_runs_expose_the_evaluation_records_in_order() {
        let mut config = ExperimentConfig::new("pendulum", StoppingSpec::Standard, 1_000);
        config.repetitions = 1;
        let (summary, records) = run_single_detailed::<Real>(&config, 0).expect("run");
        assert_eq!(records.len() as u64, summary.evaluations_full);
        assert!(records.iter().all(|r| r.fully_evaluated));
        assert!(records.iter().all(|r| r.trace.termination == Termination::Completed));
        // Budgets consumed must be strictly increasing across records.
        for pair in records.windows(2) {
            assert!(pair[0].budget_consumed_at_finish < pair[1].budget_consumed_at_finish);
        }
    }

    #[test]
    fn reward_shift_runs_and_keeps_raw_objectives() {
        let mut config = ExperimentConfig::new("pendulum", StoppingSpec::Gesp, 1_000);
        config.repetitions = 1;
        config.reward_shift = Some(16.28);
        let summary = run_single::<Real>(&config, 0).expect("run");
        let best = summary.final_best.expect("at least the first evaluation is full");
        assert!(best <= 0.0, "pendulum objectives are non-positive, got {best}");
    }

    #[test]
    fn checkpoint_budgets_cover_the_grid_and_end_exactly_at_the_budget() {
        assert_eq!(checkpoint_budgets(100, 4), vec![25, 50, 75, 100]);
        assert_eq!(checkpoint_budgets(7, 3), vec![2, 4, 7]);
        let grid = checkpoint_budgets(400_000, 100);
        assert_eq!(grid.len(), 100);
        assert_eq!(*grid.last().unwrap(), 400_000);
    }
}
