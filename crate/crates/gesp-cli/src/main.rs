//! Command-line front end for the experiment toolkit.
//!
//! Subcommands mirror the library surface: `run` executes one experiment arm,
//! `compare` contrasts two output directories, `sweep-tgrace` repeats the run
//! across grace fractions, `record-archive` stores full evaluation curves,
//! `replay` re-applies the stopping rule to a stored archive, and `report`
//! flattens any known CSV outputs into one tidy long-format file for
//! plotting.
//!
//! Exit codes: 0 on success, 2 on usage and configuration errors (anything
//! fixable in the invocation), 1 on runtime errors (missing files, malformed
//! data, I/O). Every command that computes writes `manifest.txt` — the full
//! resolved configuration plus the toolkit version — into its output
//! directory before the long work starts, so an interrupted run still says
//! what it was.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use gesp::harness::{
    evaluation_ratio, read_runs_csv, run_group, sweep_tgrace, write_ratio_csv, write_runs_csv,
    write_sweep_csv, ExperimentConfig, ParsedRuns, StoppingSpec,
};
use gesp::replay::{
    default_grace_grid, load_archive, record_archive, replay_report, save_archive,
    write_replay_report_csv,
};
use gesp::stats::{compare_at_checkpoints, write_comparison_csv};
use gesp::Real;

/// A failure with the exit code it deserves: usage problems are the caller's
/// to fix (exit 2), runtime problems belong to the filesystem or the input
/// data (exit 1).
#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(text) | CliError::Runtime(text) => text,
        }
    }
}

fn usage(text: impl Into<String>) -> CliError {
    CliError::Usage(text.into())
}

fn runtime(text: impl Into<String>) -> CliError {
    CliError::Runtime(text.into())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "gesp",
    version,
    about = "Budgeted direct-policy-search experiments with generalized early stopping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment arm and write runs.csv.
    Run(RunArgs),
    /// Compare the runs.csv of two directories: comparison.csv and ratio.csv.
    Compare(CompareArgs),
    /// Run the rule once per grace fraction and write sweep.csv.
    SweepTgrace(SweepArgs),
    /// Record full evaluation curves under standard stopping as an archive.
    RecordArchive(RecordArgs),
    /// Replay the stopping rule over an archive: replay_report.csv.
    Replay(ReplayArgs),
    /// Flatten known CSV outputs in a directory into one tidy report.csv.
    Report(ReportArgs),
}

/// Flags shared by the commands that execute experiments. Every value can
/// also come from the `--config` file; an explicit flag wins.
#[derive(Args)]
struct ExperimentFlags {
    /// Environment id: cartpole, pendulum, or ramp:<reward>:<tmax>.
    #[arg(long)]
    env: Option<String>,
    /// Stopping policy: standard, gesp, problem:<criteria>, or
    /// composite[:<criteria>] with criteria joined by '+'.
    #[arg(long)]
    stopping: Option<String>,
    /// Grace period as a fraction of the episode horizon, in [0, 1].
    #[arg(long = "t-grace")]
    t_grace: Option<f64>,
    /// Environment-step budget per repetition.
    #[arg(long)]
    budget: Option<u64>,
    /// Number of independent repetitions.
    #[arg(long)]
    reps: Option<usize>,
    /// Base seed. Falls back to the config file, then $GESP_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of evenly spaced budget checkpoints recorded per run.
    #[arg(long)]
    grid: Option<usize>,
    /// Experiment id written to runs.csv (defaults to the environment id).
    #[arg(long)]
    id: Option<String>,
    /// Per-step objective offset applied to stop decisions only; reported
    /// objectives are never shifted.
    #[arg(long = "reward-shift")]
    reward_shift: Option<f64>,
    /// Plain-text key=value config file supplying defaults for these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for repetitions; results are identical for any value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    experiment: ExperimentFlags,
    /// Output directory for manifest.txt and runs.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Directory holding the first arm's runs.csv.
    #[arg(long)]
    a: PathBuf,
    /// Directory holding the second arm's runs.csv.
    #[arg(long)]
    b: PathBuf,
    /// Significance level for the pointwise rank test.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Output directory for manifest.txt, comparison.csv, and ratio.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentFlags,
    /// Comma-separated grace fractions (default 0,0.05,0.2,0.5,1).
    #[arg(long)]
    fractions: Option<String>,
    /// Output directory for manifest.txt and sweep.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecordArgs {
    #[command(flatten)]
    experiment: ExperimentFlags,
    /// Archive directory receiving manifest.txt and one rep_<k>.csv per
    /// repetition.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Archive directory of rep_<k>.csv files written by record-archive.
    #[arg(long)]
    archive: PathBuf,
    /// Comma-separated grace fractions (default: 0 to 1 in steps of 0.05).
    #[arg(long)]
    fractions: Option<String>,
    /// Output directory for manifest.txt and replay_report.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding CSV outputs from the other subcommands.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for report.csv.
    #[arg(long)]
    out: PathBuf,
}

/// Keys the config file may define. Anything else is rejected, mirroring how
/// unknown flags are rejected.
const CONFIG_KEYS: &[&str] =
    &["env", "stopping", "t-grace", "budget", "reps", "seed", "grid", "id", "reward-shift", "fractions"];

/// Values read from a `--config` file: one `key=value` per line, `#`
/// comments and blank lines ignored.
#[derive(Default)]
struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|error| runtime(format!("config {}: {error}", path.display())))?;
        let mut values = BTreeMap::new();
        for (index, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!("config {} line {}: expected key=value", path.display(), index + 1))
            })?;
            let key = key.trim();
            if !CONFIG_KEYS.contains(&key) {
                return Err(usage(format!(
                    "config {} line {}: unknown key `{key}` (known: {})",
                    path.display(),
                    index + 1,
                    CONFIG_KEYS.join(", ")
                )));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(text) => text
                .parse()
                .map(Some)
                .map_err(|error| usage(format!("config key `{key}` = `{text}`: {error}"))),
        }
    }
}

/// Seed precedence: explicit flag, then config file, then $GESP_SEED, then 0.
fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> CliResult<u64> {
    if let Some(seed) = flag.or(file) {
        return Ok(seed);
    }
    match std::env::var("GESP_SEED") {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| usage(format!("GESP_SEED `{text}` is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(error) => Err(usage(format!("GESP_SEED: {error}"))),
    }
}

/// Merge flags over the optional config file into a validated experiment
/// configuration. The config file is returned too, for command-specific keys
/// such as `fractions`.
fn resolve_experiment(flags: &ExperimentFlags) -> CliResult<(ExperimentConfig, FileConfig)> {
    let file = match &flags.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let env = flags
        .env
        .clone()
        .or(file.get::<String>("env")?)
        .ok_or_else(|| usage("--env is required (flag or config file)"))?;
    let stopping_text =
        flags.stopping.clone().or(file.get("stopping")?).unwrap_or_else(|| "gesp".to_string());
    let stopping: StoppingSpec =
        stopping_text.parse().map_err(|error| usage(format!("--stopping: {error}")))?;
    let budget = flags
        .budget
        .or(file.get("budget")?)
        .ok_or_else(|| usage("--budget is required (flag or config file)"))?;

    let mut config = ExperimentConfig::new(&env, stopping, budget);
    if let Some(fraction) = flags.t_grace.or(file.get("t-grace")?) {
        config.t_grace_fraction = fraction;
    }
    if let Some(reps) = flags.reps.or(file.get("reps")?) {
        config.repetitions = reps;
    }
    if let Some(grid) = flags.grid.or(file.get("grid")?) {
        config.sample_grid = grid;
    }
    config.base_seed = resolve_seed(flags.seed, file.get("seed")?)?;
    config.experiment_id = flags.id.clone().or(file.get("id")?);
    config.reward_shift = match flags.reward_shift {
        Some(shift) => Some(shift),
        None => file.get("reward-shift")?,
    };
    config.validate().map_err(|error| usage(error.to_string()))?;
    Ok((config, file))
}

/// Cap the worker pool at `jobs` threads. Repetitions share no mutable
/// state, so results are identical for any value; 1 keeps scheduling (and
/// log interleaving) deterministic.
fn install_worker_pool(jobs: usize) -> CliResult<()> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|error| runtime(format!("worker pool: {error}")))
}

fn parse_fractions(text: &str) -> CliResult<Vec<f64>> {
    let mut fractions = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let fraction: f64 =
            part.parse().map_err(|_| usage(format!("fraction `{part}` is not a number")))?;
        if !(0.0..=1.0).contains(&fraction) {
            return Err(usage(format!("fraction {fraction} outside [0, 1]")));
        }
        fractions.push(fraction);
    }
    if fractions.is_empty() {
        return Err(usage("at least one grace fraction is required"));
    }
    Ok(fractions)
}

fn render_fractions(fractions: &[f64]) -> String {
    fractions.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn write_file(path: &Path, write: impl FnOnce(&Path) -> std::io::Result<()>) -> CliResult<()> {
    write(path).map_err(|error| runtime(format!("{}: {error}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Write `manifest.txt` into `out` (creating the directory) before any long
/// computation: the full resolved configuration plus the toolkit version.
/// Worker count is deliberately not recorded — it cannot change the results.
fn write_manifest(out: &Path, command: &str, entries: &[(&str, String)]) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|error| runtime(format!("{}: {error}", out.display())))?;
    let mut text = String::new();
    let _ = writeln!(text, "tool=gesp-cli {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "command={command}");
    for (key, value) in entries {
        let _ = writeln!(text, "{key}={value}");
    }
    write_file(&out.join("manifest.txt"), |path| fs::write(path, &text))
}

fn config_entries(config: &ExperimentConfig) -> Vec<(&'static str, String)> {
    vec![
        ("env", config.env_id.clone()),
        ("stopping", config.stopping.to_string()),
        ("t_grace_fraction", config.t_grace_fraction.to_string()),
        ("budget", config.budget.to_string()),
        ("repetitions", config.repetitions.to_string()),
        ("base_seed", config.base_seed.to_string()),
        ("sample_grid", config.sample_grid.to_string()),
        ("experiment_id", config.experiment_id()),
        ("reward_shift", config.reward_shift.map_or_else(String::new, |shift| shift.to_string())),
    ]
}

fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let (config, _) = resolve_experiment(&args.experiment)?;
    install_worker_pool(args.experiment.jobs)?;
    write_manifest(&args.out, "run", &config_entries(&config))?;
    let group = run_group::<Real>(&config).map_err(|error| runtime(error.to_string()))?;
    write_file(&args.out.join("runs.csv"), |path| {
        write_runs_csv(path, &config.experiment_id(), &group)
    })
}

fn read_runs_dir(dir: &Path) -> CliResult<ParsedRuns> {
    let path = dir.join("runs.csv");
    read_runs_csv(&path).map_err(|error| runtime(format!("{}: {error}", path.display())))
}

fn cmd_compare(args: &CompareArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(usage(format!("--alpha {} outside [0, 1]", args.alpha)));
    }
    let first = read_runs_dir(&args.a)?;
    let second = read_runs_dir(&args.b)?;
    if first.checkpoints != second.checkpoints {
        return Err(runtime(format!(
            "checkpoint grids differ: {} has {} checkpoints ending at {:?}, {} has {} ending at {:?}",
            args.a.display(),
            first.checkpoints.len(),
            first.checkpoints.last(),
            args.b.display(),
            second.checkpoints.len(),
            second.checkpoints.last(),
        )));
    }
    write_manifest(
        &args.out,
        "compare",
        &[
            ("a", args.a.display().to_string()),
            ("b", args.b.display().to_string()),
            ("experiment_id_a", first.experiment_id.clone()),
            ("experiment_id_b", second.experiment_id.clone()),
            ("alpha", args.alpha.to_string()),
        ],
    )?;
    let rows = compare_at_checkpoints(
        &first.checkpoints,
        &first.best_series(),
        &second.best_series(),
        args.alpha,
    );
    write_file(&args.out.join("comparison.csv"), |path| write_comparison_csv(path, &rows))?;
    let ratios = evaluation_ratio(&first.to_summaries(), &second.to_summaries());
    write_file(&args.out.join("ratio.csv"), |path| write_ratio_csv(path, &ratios))
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    if args.experiment.stopping.is_some() {
        return Err(usage("sweep-tgrace always runs the gesp rule; drop --stopping"));
    }
    if args.experiment.t_grace.is_some() {
        return Err(usage("sweep-tgrace takes --fractions instead of --t-grace"));
    }
    let (config, file) = resolve_experiment(&args.experiment)?;
    let fractions_text = args
        .fractions
        .clone()
        .or(file.get::<String>("fractions")?)
        .unwrap_or_else(|| "0,0.05,0.2,0.5,1".to_string());
    let fractions = parse_fractions(&fractions_text)?;
    install_worker_pool(args.experiment.jobs)?;
    let mut entries = config_entries(&config);
    entries.push(("fractions", render_fractions(&fractions)));
    write_manifest(&args.out, "sweep-tgrace", &entries)?;
    let points =
        sweep_tgrace::<Real>(&config, &fractions).map_err(|error| runtime(error.to_string()))?;
    write_file(&args.out.join("sweep.csv"), |path| write_sweep_csv(path, &points))
}

fn cmd_record(args: &RecordArgs) -> CliResult<()> {
    if args.experiment.stopping.is_some() {
        return Err(usage("record-archive always records under standard stopping; drop --stopping"));
    }
    let (mut config, _) = resolve_experiment(&args.experiment)?;
    // Recording forces standard stopping; echo what actually runs.
    config.stopping = StoppingSpec::Standard;
    install_worker_pool(args.experiment.jobs)?;
    write_manifest(&args.out, "record-archive", &config_entries(&config))?;
    let archive = record_archive::<Real>(&config).map_err(|error| runtime(error.to_string()))?;
    save_archive(&args.out, &archive)
        .map_err(|error| runtime(format!("{}: {error}", args.out.display())))?;
    println!("wrote {} repetition files to {}", archive.reps.len(), args.out.display());
    Ok(())
}

fn cmd_replay(args: &ReplayArgs) -> CliResult<()> {
    let archive = load_archive::<Real>(&args.archive)
        .map_err(|error| runtime(format!("{}: {error}", args.archive.display())))?;
    let fractions = match &args.fractions {
        Some(text) => parse_fractions(text)?,
        None => default_grace_grid(),
    };
    write_manifest(
        &args.out,
        "replay",
        &[
            ("archive", args.archive.display().to_string()),
            ("env", archive.env_id.clone()),
            ("t_max", archive.t_max.to_string()),
            ("repetitions", archive.reps.len().to_string()),
            ("fractions", render_fractions(&fractions)),
        ],
    )?;
    let rows = replay_report(&archive, &fractions);
    write_file(&args.out.join("replay_report.csv"), |path| write_replay_report_csv(path, &rows))
}

/// One tidy long-format row per data point: where it came from, what it
/// measures, which series it belongs to, and its (x, y) coordinates. Cell
/// text is copied verbatim from the source files, so flattening never
/// reformats a number.
struct TidyRows {
    text: String,
    rows: usize,
}

impl TidyRows {
    fn new() -> Self {
        TidyRows { text: String::from("source,metric,series,x,y\n"), rows: 0 }
    }

    fn push(&mut self, source: &str, metric: &str, series: &str, x: &str, y: &str) {
        let _ = writeln!(self.text, "{source},{metric},{series},{x},{y}");
        self.rows += 1;
    }
}

/// Split one CSV line, checking only the field count — cells stay text.
fn split_row<'a>(line: &'a str, fields: usize, file: &str, number: usize) -> CliResult<Vec<&'a str>> {
    let cells: Vec<&str> = line.split(',').collect();
    if cells.len() != fields {
        return Err(runtime(format!(
            "{file} line {number}: expected {fields} fields, found {}",
            cells.len()
        )));
    }
    Ok(cells)
}

/// Read a known CSV file if present and feed its rows to `convert`.
fn flatten_file(
    dir: &Path,
    file: &str,
    header: &str,
    fields: usize,
    out: &mut TidyRows,
    mut convert: impl FnMut(&[&str], &mut TidyRows),
) -> CliResult<bool> {
    let path = dir.join(file);
    if !path.exists() {
        return Ok(false);
    }
    let text =
        fs::read_to_string(&path).map_err(|error| runtime(format!("{}: {error}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == header => {}
        _ => return Err(runtime(format!("{}: unexpected header", path.display()))),
    }
    for (index, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cells = split_row(line, fields, file, index + 1)?;
        convert(&cells, out);
    }
    Ok(true)
}

fn cmd_report(args: &ReportArgs) -> CliResult<()> {
    let dir = &args.input;
    let mut tidy = TidyRows::new();
    let mut found = false;

    found |= flatten_file(
        dir,
        "runs.csv",
        "experiment_id,rep,checkpoint_budget,best_objective,evaluations_started,evaluations_full",
        6,
        &mut tidy,
        |cells, out| {
            if !cells[3].is_empty() {
                out.push("runs", "best_objective", cells[1], cells[2], cells[3]);
            }
            out.push("runs", "evaluations_started", cells[1], cells[2], cells[4]);
            out.push("runs", "evaluations_full", cells[1], cells[2], cells[5]);
        },
    )?;

    found |= flatten_file(
        dir,
        "ratio.csv",
        "checkpoint_budget,ratio",
        2,
        &mut tidy,
        |cells, out| out.push("ratio", "evaluation_ratio", "", cells[0], cells[1]),
    )?;

    found |= flatten_file(
        dir,
        "comparison.csv",
        "checkpoint_budget,median_a,q25_a,q75_a,median_b,q25_b,q75_b,p_value,significant",
        9,
        &mut tidy,
        |cells, out| {
            let metrics =
                ["median_a", "q25_a", "q75_a", "median_b", "q25_b", "q75_b", "p_value"];
            for (metric, cell) in metrics.iter().zip(&cells[1..8]) {
                if !cell.is_empty() {
                    out.push("comparison", metric, "", cells[0], cell);
                }
            }
            let flag = if cells[8] == "true" { "1" } else { "0" };
            out.push("comparison", "significant", "", cells[0], flag);
        },
    )?;

    found |= flatten_file(
        dir,
        "sweep.csv",
        "grace_fraction,rep,final_best",
        3,
        &mut tidy,
        |cells, out| {
            if !cells[2].is_empty() {
                out.push("sweep", "final_best", cells[0], cells[1], cells[2]);
            }
        },
    )?;

    found |= flatten_file(
        dir,
        "replay_report.csv",
        "grace_fraction,best_not_missed,steps_computed,improves_result",
        4,
        &mut tidy,
        |cells, out| {
            out.push("replay", "best_not_missed", "", cells[0], cells[1]);
            out.push("replay", "steps_computed", "", cells[0], cells[2]);
            out.push("replay", "improves_result", "", cells[0], cells[3]);
        },
    )?;

    if !found {
        return Err(runtime(format!(
            "{}: no known CSV outputs (looked for runs.csv, ratio.csv, comparison.csv, \
             sweep.csv, replay_report.csv)",
            dir.display()
        )));
    }
    fs::create_dir_all(&args.out)
        .map_err(|error| runtime(format!("{}: {error}", args.out.display())))?;
    write_file(&args.out.join("report.csv"), |path| fs::write(path, &tidy.text))?;
    println!("flattened {} data points", tidy.rows);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::SweepTgrace(args) => cmd_sweep(args),
        Command::RecordArchive(args) => cmd_record(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {}", error.message());
            ExitCode::from(error.code())
        }
    }
}
