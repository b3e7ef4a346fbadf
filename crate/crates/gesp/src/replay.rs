//! Counterfactual grace-period analysis over recorded evaluation curves.
//!
//! A run executed with standard stopping leaves behind the full per-step
//! objective curve of every evaluation. Replaying the stopping rule over
//! those curves — assuming the search trajectory itself would not change —
//! answers, for any grace setting and at no extra simulation cost: would the
//! best solution still have been found, how many steps would have been
//! computed, and would the final result have been at least as good?
//!
//! An archive stores, per repetition, the curves in evaluation order. Each
//! curve is padded to the horizon by holding its final value constant, but
//! the number of steps the episode actually ran is kept alongside: replay
//! walks only the real steps, and an episode that ended naturally before the
//! horizon completes at its recorded end exactly as it did live — the padded
//! tail is never scanned, so constant tails cannot trigger spurious cuts.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::env::make_env;
use crate::harness::{run_single_detailed, ExperimentConfig, HarnessError, StoppingSpec};
use crate::stopping::{maybe_update_best, should_stop, BestReference, GraceConfig};
use crate::trace::{pad_trace_to_full, EpisodeTrace, EvaluationRecord, Termination};
use crate::{Scalar, SearchScalar};

/// One archived evaluation: its cumulative objective curve padded to the
/// horizon, plus how many steps the episode actually ran.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchivedTrace<S> {
    /// Steps the episode really took (at most the horizon). Replay never
    /// scans past this.
    pub steps_run: usize,
    /// Cumulative objective curve of length exactly `t_max`; entries past
    /// `steps_run` hold the final value constant.
    pub padded: Vec<S>,
}

/// All completed evaluations of one repetition, in evaluation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RepArchive<S> {
    pub traces: Vec<ArchivedTrace<S>>,
}

/// Recorded evaluation curves of a whole experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceArchive<S> {
    pub env_id: String,
    /// Horizon every stored curve is padded to.
    pub t_max: usize,
    pub reps: Vec<RepArchive<S>>,
}

/// Run the experiment with stopping forced to standard and keep every
/// evaluation's full curve. The recorded run is exactly the run
/// [`crate::harness::run_single`] would report for the same config.
pub fn record_archive<S: SearchScalar>(
    config: &ExperimentConfig,
) -> Result<TraceArchive<S>, HarnessError> {
    let mut standard = config.clone();
    standard.stopping = StoppingSpec::Standard;
    standard.validate()?;
    let t_max = make_env::<S>(&standard.env_id)?.t_max();
    let reps = (0..standard.repetitions)
        .into_par_iter()
        .map(|rep| {
            let (_, records) = run_single_detailed::<S>(&standard, rep)?;
            Ok(RepArchive {
                traces: records
                    .iter()
                    .map(|record| ArchivedTrace {
                        steps_run: record.trace.steps_run,
                        padded: pad_trace_to_full(&record.trace, t_max),
                    })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(TraceArchive { env_id: standard.env_id.clone(), t_max, reps })
}

/// Result of replaying one repetition under one grace setting.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOutcome<S> {
    /// Per evaluation: the step after which the rule would have cut it, or
    /// `None` if it would have run to its recorded end.
    pub stop_steps: Vec<Option<usize>>,
    /// Which evaluation would have become the incumbent best.
    pub best_index: Option<usize>,
    /// Its final objective.
    pub best_objective: Option<S>,
    /// Environment steps the replayed run would have consumed.
    pub steps_replayed: u64,
}

/// Replay the stopping rule over one repetition's archived curves, keeping
/// the incumbent-reference bookkeeping of a live run: cut evaluations never
/// become the reference, and a fresh reference never cuts anything.
///
/// Step order matches the live loop. An episode that ended naturally before
/// the horizon is final at its recorded last step, so the rule is not
/// consulted there; an episode that ran the full horizon can still be cut at
/// exactly the last step, in which case its objective counts as partial.
pub fn replay_with_gesp<S: Scalar>(
    rep: &RepArchive<S>,
    t_max: usize,
    grace: &GraceConfig,
) -> ReplayOutcome<S> {
    let mut reference = BestReference::new(t_max);
    let mut stop_steps = Vec::with_capacity(rep.traces.len());
    let mut best_index = None;
    let mut steps_replayed = 0u64;

    for (index, archived) in rep.traces.iter().enumerate() {
        assert_eq!(archived.padded.len(), t_max, "archived curves must cover the horizon");
        assert!(
            archived.steps_run >= 1 && archived.steps_run <= t_max,
            "archived step count {} outside 1..={t_max}",
            archived.steps_run
        );
        let ended_naturally = archived.steps_run < t_max;
        let mut cut_at = None;
        for t in 1..=archived.steps_run {
            if ended_naturally && t == archived.steps_run {
                break; // Final objective; the rule never sees this step.
            }
            if should_stop(t, &archived.padded[..t], &reference, grace) {
                cut_at = Some(t);
                break;
            }
        }
        stop_steps.push(cut_at);
        match cut_at {
            Some(t) => steps_replayed += t as u64,
            None => {
                steps_replayed += archived.steps_run as u64;
                let termination = if ended_naturally {
                    Termination::NaturallyTerminated
                } else {
                    Termination::Completed
                };
                let trace = EpisodeTrace::new(
                    archived.padded[..archived.steps_run].to_vec(),
                    termination,
                );
                let record = EvaluationRecord::new(Vec::new(), trace, steps_replayed);
                if maybe_update_best(&record, &mut reference) {
                    best_index = Some(index);
                }
            }
        }
    }

    let best_objective = reference.has_incumbent().then(|| reference.best_full_objective());
    ReplayOutcome { stop_steps, best_index, best_objective, steps_replayed }
}

/// Replay quality at one grace fraction, aggregated over repetitions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProportionRow {
    pub grace_fraction: f64,
    /// Share of repetitions whose replayed best is the very evaluation the
    /// un-cut run selects (matched by evaluation index, not by value).
    pub best_not_missed: f64,
    /// Replayed steps as a share of the archived steps.
    pub steps_computed: f64,
    /// Share of repetitions whose replayed best objective is at least the
    /// un-cut run's. An upper bound on live behaviour, since replay assumes
    /// the search trajectory itself would not change.
    pub improves_result: f64,
}

fn baseline_outcomes<S: Scalar>(archive: &TraceArchive<S>) -> Vec<ReplayOutcome<S>> {
    let no_cut = GraceConfig::from_steps(archive.t_max);
    archive.reps.iter().map(|rep| replay_with_gesp(rep, archive.t_max, &no_cut)).collect()
}

fn proportions_against<S: Scalar>(
    archive: &TraceArchive<S>,
    fraction: f64,
    baselines: &[ReplayOutcome<S>],
) -> ProportionRow {
    assert!(!archive.reps.is_empty(), "archive holds no repetitions");
    let grace = GraceConfig::from_fraction(fraction, archive.t_max);
    let mut same_best = 0usize;
    let mut at_least_as_good = 0usize;
    let mut replayed_steps = 0u64;
    let mut archived_steps = 0u64;
    for (rep, baseline) in archive.reps.iter().zip(baselines) {
        let outcome = replay_with_gesp(rep, archive.t_max, &grace);
        if outcome.best_index == baseline.best_index {
            same_best += 1;
        }
        match (outcome.best_objective, baseline.best_objective) {
            (Some(replayed), Some(standard)) if replayed >= standard => at_least_as_good += 1,
            (None, None) => at_least_as_good += 1,
            _ => {}
        }
        replayed_steps += outcome.steps_replayed;
        archived_steps += rep.traces.iter().map(|t| t.steps_run as u64).sum::<u64>();
    }
    assert!(archived_steps > 0, "archive holds no steps");
    let reps = archive.reps.len() as f64;
    ProportionRow {
        grace_fraction: fraction,
        best_not_missed: same_best as f64 / reps,
        steps_computed: replayed_steps as f64 / archived_steps as f64,
        improves_result: at_least_as_good as f64 / reps,
    }
}

/// The three replay proportions at one grace fraction.
pub fn compute_proportions<S: Scalar>(archive: &TraceArchive<S>, fraction: f64) -> ProportionRow {
    proportions_against(archive, fraction, &baseline_outcomes(archive))
}

/// The three replay proportions across a grid of grace fractions.
pub fn replay_report<S: Scalar>(archive: &TraceArchive<S>, fractions: &[f64]) -> Vec<ProportionRow> {
    let baselines = baseline_outcomes(archive);
    fractions.iter().map(|&f| proportions_against(archive, f, &baselines)).collect()
}

/// Default grace grid: 0.0 to 1.0 in steps of 0.05 (21 points).
pub fn default_grace_grid() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) / 20.0).collect()
}

/// Write a replay report as `replay_report.csv`.
pub fn write_replay_report_csv(path: &Path, rows: &[ProportionRow]) -> io::Result<()> {
    let mut out = String::from("grace_fraction,best_not_missed,steps_computed,improves_result\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.grace_fraction, row.best_not_missed, row.steps_computed, row.improves_result
        );
    }
    fs::write(path, out)
}

/// Problems reading an archive directory back.
#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{file} line {line}: {what}")]
    Malformed { file: String, line: usize, what: String },
    #[error("archive directory {0} has no rep_0.csv")]
    Empty(String),
}

fn rep_file_name(rep: usize) -> String {
    format!("rep_{rep}.csv")
}

/// Serialize an archive: one `rep_<k>.csv` per repetition inside `dir`
/// (created if needed). The first line carries the metadata
/// (`env_id,t_max,rows`); each following line is one evaluation's step count
/// and its padded curve.
pub fn save_archive<S: Scalar>(dir: &Path, archive: &TraceArchive<S>) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (rep_index, rep) in archive.reps.iter().enumerate() {
        let mut out = String::new();
        let _ = writeln!(out, "{},{},{}", archive.env_id, archive.t_max, rep.traces.len());
        for trace in &rep.traces {
            assert_eq!(trace.padded.len(), archive.t_max, "curve length must equal the horizon");
            let _ = write!(out, "{}", trace.steps_run);
            for value in &trace.padded {
                let _ = write!(out, ",{value}");
            }
            out.push('\n');
        }
        fs::write(dir.join(rep_file_name(rep_index)), out)?;
    }
    Ok(())
}

/// Load an archive saved by [`save_archive`]: `rep_0.csv`, `rep_1.csv`, …
/// read until the numbering stops. Every file must agree on the environment
/// id and horizon.
pub fn load_archive<S: Scalar>(dir: &Path) -> Result<TraceArchive<S>, ArchiveError> {
    let mut env_id: Option<String> = None;
    let mut t_max = 0usize;
    let mut reps = Vec::new();
    loop {
        let file_name = rep_file_name(reps.len());
        let path = dir.join(&file_name);
        if !path.exists() {
            break;
        }
        let malformed = |line: usize, what: &str| ArchiveError::Malformed {
            file: file_name.clone(),
            line,
            what: what.to_string(),
        };
        let text = fs::read_to_string(&path)?;
        let mut lines = text.lines().enumerate();
        let (_, meta) = lines.next().ok_or_else(|| malformed(1, "empty file"))?;
        let fields: Vec<&str> = meta.split(',').collect();
        if fields.len() != 3 {
            return Err(malformed(1, "expected env_id,t_max,rows"));
        }
        let file_t_max: usize =
            fields[1].parse().map_err(|_| malformed(1, "t_max must be an integer"))?;
        if file_t_max == 0 {
            return Err(malformed(1, "t_max must be at least 1"));
        }
        let rows: usize = fields[2].parse().map_err(|_| malformed(1, "rows must be an integer"))?;
        match &env_id {
            None => {
                env_id = Some(fields[0].to_string());
                t_max = file_t_max;
            }
            Some(seen) => {
                if seen != fields[0] || t_max != file_t_max {
                    return Err(malformed(1, "metadata differs from the first repetition file"));
                }
            }
        }

        let mut traces = Vec::with_capacity(rows);
        for (index, line) in lines {
            let line_no = index + 1;
            if line.is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let steps_run: usize = cells
                .next()
                .expect("split yields at least one cell")
                .parse()
                .map_err(|_| malformed(line_no, "steps_run must be an integer"))?;
            if steps_run < 1 || steps_run > t_max {
                return Err(malformed(line_no, "steps_run outside 1..=t_max"));
            }
            let mut padded = Vec::with_capacity(t_max);
            for cell in cells {
                let value: f64 =
                    cell.parse().map_err(|_| malformed(line_no, "curve value must be a number"))?;
                padded.push(crate::from_f64::<S>(value));
            }
            if padded.len() != t_max {
                return Err(malformed(line_no, "curve length differs from t_max"));
            }
            traces.push(ArchivedTrace { steps_run, padded });
        }
        if traces.len() != rows {
            return Err(ArchiveError::Malformed {
                file: file_name,
                line: 1,
                what: format!("declared {rows} rows but found {}", traces.len()),
            });
        }
        reps.push(RepArchive { traces });
    }
    if reps.is_empty() {
        return Err(ArchiveError::Empty(dir.display().to_string()));
    }
    Ok(TraceArchive { env_id: env_id.expect("had at least one file"), t_max, reps })
}
