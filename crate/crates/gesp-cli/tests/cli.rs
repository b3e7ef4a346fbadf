//! End-to-end tests of the compiled binary: exit codes, flag/config/env
//! precedence, reproducible outputs, and the plumbing of every subcommand.
//!
//! Fixtures use the synthetic ramp environment (policy-independent, tiny
//! budgets) so the whole file runs in seconds and every byte is
//! deterministic.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn binary() -> Command {
    let mut command = Command::new(env!("CARGO_BIN_EXE_gesp"));
    // Each test controls the seed environment explicitly.
    command.env_remove("GESP_SEED");
    command
}

fn run_cli(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut command = binary();
    command.args(args);
    for (key, value) in envs {
        command.env(key, value);
    }
    command.output().expect("binary starts")
}

fn assert_exit(args: &[&str], envs: &[(&str, &str)], expected: i32, context: &str) {
    let output = run_cli(args, envs);
    assert_eq!(
        output.status.code(),
        Some(expected),
        "{context}: expected exit {expected}, got {:?}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn path_str(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

/// Run the binary expecting success; panic with stderr otherwise.
fn run_ok(args: &[&str], envs: &[(&str, &str)]) {
    assert_exit(args, envs, 0, &format!("gesp {}", args.join(" ")));
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|error| panic!("{}: {error}", path.display()))
}

/// Standard tiny ramp arm: 2 reps x 500-step budget on a 50-step horizon.
fn ramp_run(out: &Path, extra: &[&str], envs: &[(&str, &str)]) {
    let out = out.to_str().expect("utf-8 path");
    let mut args = vec![
        "run",
        "--env",
        "ramp:-1:50",
        "--stopping",
        "standard",
        "--budget",
        "500",
        "--reps",
        "2",
        "--grid",
        "10",
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    run_ok(&args, envs);
}

#[test]
fn usage_errors_exit_with_code_2() {
    let dir = TempDir::new().expect("tempdir");
    let out = path_str(&dir, "out");
    let out = out.to_str().unwrap();

    assert_exit(&["run", "--bogus-flag"], &[], 2, "unknown flag");
    assert_exit(&["bogus-subcommand"], &[], 2, "unknown subcommand");
    assert_exit(&["run", "--budget", "500", "--out", out], &[], 2, "missing --env");
    assert_exit(&["run", "--env", "ramp:-1:50", "--out", out], &[], 2, "missing --budget");
    assert_exit(
        &["run", "--env", "mountaincar", "--budget", "500", "--out", out],
        &[],
        2,
        "unknown environment",
    );
    assert_exit(
        &["run", "--env", "pendulum", "--budget", "10", "--out", out],
        &[],
        2,
        "budget below one episode",
    );
    assert_exit(
        &["run", "--env", "pendulum", "--budget", "500", "--t-grace", "1.5", "--out", out],
        &[],
        2,
        "grace fraction outside [0, 1]",
    );
    assert_exit(
        &["run", "--env", "pendulum", "--budget", "500", "--stopping", "sometimes", "--out", out],
        &[],
        2,
        "unknown stopping policy",
    );
    assert_exit(
        &["run", "--env", "ramp:-1:50", "--budget", "500", "--jobs", "0", "--out", out],
        &[],
        2,
        "zero worker threads",
    );
    assert_exit(
        &["run", "--env", "ramp:-1:50", "--budget", "500", "--out", out],
        &[("GESP_SEED", "not-a-number")],
        2,
        "malformed GESP_SEED",
    );
    assert_exit(
        &[
            "sweep-tgrace",
            "--env",
            "ramp:-1:50",
            "--budget",
            "500",
            "--stopping",
            "gesp",
            "--out",
            out,
        ],
        &[],
        2,
        "sweep rejects --stopping",
    );
    assert_exit(
        &["compare", "--a", out, "--b", out, "--alpha", "2", "--out", out],
        &[],
        2,
        "alpha outside [0, 1]",
    );

    let config = path_str(&dir, "bad.cfg");
    fs::write(&config, "bogus=1\n").expect("write config");
    assert_exit(
        &["run", "--config", config.to_str().unwrap(), "--out", out],
        &[],
        2,
        "unknown config key",
    );
}

#[test]
fn runtime_errors_exit_with_code_1() {
    let dir = TempDir::new().expect("tempdir");
    let out = path_str(&dir, "out");
    let out = out.to_str().unwrap();
    let missing = path_str(&dir, "missing");
    let missing = missing.to_str().unwrap();

    assert_exit(
        &["compare", "--a", missing, "--b", missing, "--out", out],
        &[],
        1,
        "compare on a missing directory",
    );
    assert_exit(
        &["replay", "--archive", missing, "--out", out],
        &[],
        1,
        "replay on a missing archive",
    );

    let empty = path_str(&dir, "empty");
    fs::create_dir_all(&empty).expect("mkdir");
    assert_exit(
        &["report", "--in", empty.to_str().unwrap(), "--out", out],
        &[],
        1,
        "report on a directory without known outputs",
    );

    // A directory with runs.csv is not an archive.
    let arm = path_str(&dir, "arm");
    ramp_run(&arm, &["--seed", "3"], &[]);
    assert_exit(
        &["replay", "--archive", arm.to_str().unwrap(), "--out", out],
        &[],
        1,
        "replay on a runs directory",
    );
}

#[test]
fn run_output_is_reproducible_and_the_manifest_precedes_it() {
    let dir = TempDir::new().expect("tempdir");
    let first = path_str(&dir, "first");
    let second = path_str(&dir, "second");
    ramp_run(&first, &["--seed", "3"], &[]);
    ramp_run(&second, &["--seed", "3"], &[]);

    assert_eq!(read(&first.join("runs.csv")), read(&second.join("runs.csv")));
    assert_eq!(read(&first.join("manifest.txt")), read(&second.join("manifest.txt")));

    let manifest = read(&first.join("manifest.txt"));
    for line in [
        "command=run",
        "env=ramp:-1:50",
        "stopping=standard",
        "budget=500",
        "repetitions=2",
        "base_seed=3",
        "sample_grid=10",
    ] {
        assert!(manifest.contains(line), "manifest missing `{line}`:\n{manifest}");
    }
}

#[test]
fn a_single_ramp_repetition_produces_exactly_the_expected_bytes() {
    // Hand-derived fixture: three 100-step evaluations at -1 per step fill a
    // 300-step budget; the best is -100 from the first checkpoint on.
    let dir = TempDir::new().expect("tempdir");
    let out = path_str(&dir, "out");
    run_ok(
        &[
            "run",
            "--env",
            "ramp:-1:100",
            "--stopping",
            "standard",
            "--budget",
            "300",
            "--reps",
            "1",
            "--grid",
            "3",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(
        read(&out.join("runs.csv")),
        "experiment_id,rep,checkpoint_budget,best_objective,evaluations_started,evaluations_full\n\
         ramp:-1:100,0,100,-100,1,1\n\
         ramp:-1:100,0,200,-100,2,2\n\
         ramp:-1:100,0,300,-100,3,3\n"
    );
}

#[test]
fn seed_precedence_is_flag_then_config_then_environment_then_zero() {
    let dir = TempDir::new().expect("tempdir");

    let by_flag = path_str(&dir, "by_flag");
    ramp_run(&by_flag, &["--seed", "3"], &[]);
    let flag_csv = read(&by_flag.join("runs.csv"));

    // $GESP_SEED supplies the seed when no flag is given.
    let by_env = path_str(&dir, "by_env");
    ramp_run(&by_env, &[], &[("GESP_SEED", "3")]);
    assert_eq!(flag_csv, read(&by_env.join("runs.csv")), "env var must act as the default seed");

    // The flag wins over the environment.
    let flag_wins = path_str(&dir, "flag_wins");
    ramp_run(&flag_wins, &["--seed", "3"], &[("GESP_SEED", "99")]);
    assert_eq!(flag_csv, read(&flag_wins.join("runs.csv")), "flag must beat $GESP_SEED");

    // The config file wins over the environment but loses to the flag.
    let config = path_str(&dir, "seed.cfg");
    fs::write(&config, "seed=3\n").expect("write config");
    let config = config.to_str().unwrap();
    let by_config = path_str(&dir, "by_config");
    ramp_run(&by_config, &["--config", config], &[("GESP_SEED", "99")]);
    assert_eq!(flag_csv, read(&by_config.join("runs.csv")), "config must beat $GESP_SEED");
    let flag_over_config = path_str(&dir, "flag_over_config");
    ramp_run(&flag_over_config, &["--config", config, "--seed", "4"], &[("GESP_SEED", "99")]);
    let seed_four = path_str(&dir, "seed_four");
    ramp_run(&seed_four, &["--seed", "4"], &[]);
    assert_eq!(
        read(&seed_four.join("runs.csv")),
        read(&flag_over_config.join("runs.csv")),
        "flag must beat the config file"
    );

    // With nothing supplied the seed is 0.
    let unseeded = path_str(&dir, "unseeded");
    ramp_run(&unseeded, &[], &[]);
    let seed_zero = path_str(&dir, "seed_zero");
    ramp_run(&seed_zero, &["--seed", "0"], &[]);
    assert_eq!(read(&seed_zero.join("runs.csv")), read(&unseeded.join("runs.csv")));
}

#[test]
fn a_config_file_can_supply_the_whole_experiment() {
    let dir = TempDir::new().expect("tempdir");
    let config = path_str(&dir, "experiment.cfg");
    fs::write(
        &config,
        "# tiny ramp fixture\n\
         env = ramp:-1:50\n\
         stopping = standard\n\
         budget = 500\n\
         reps = 2\n\
         seed = 5\n\
         grid = 10\n",
    )
    .expect("write config");

    let from_config = path_str(&dir, "from_config");
    run_ok(
        &[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            from_config.to_str().unwrap(),
        ],
        &[],
    );
    let from_flags = path_str(&dir, "from_flags");
    ramp_run(&from_flags, &["--seed", "5"], &[]);
    assert_eq!(read(&from_config.join("runs.csv")), read(&from_flags.join("runs.csv")));
    assert_eq!(read(&from_config.join("manifest.txt")), read(&from_flags.join("manifest.txt")));
}

#[test]
fn cartpole_rule_and_standard_arms_match_through_the_cli() {
    let dir = TempDir::new().expect("tempdir");
    let rule = path_str(&dir, "rule");
    let standard = path_str(&dir, "standard");
    for (out, stopping) in [(&rule, "gesp"), (&standard, "standard")] {
        run_ok(
            &[
                "run",
                "--env",
                "cartpole",
                "--stopping",
                stopping,
                "--t-grace",
                "0.2",
                "--budget",
                "3000",
                "--reps",
                "2",
                "--seed",
                "1",
                "--id",
                "cartpole-arm",
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
        );
    }
    assert_eq!(
        read(&rule.join("runs.csv")),
        read(&standard.join("runs.csv")),
        "survival rewards never trigger the rule, so the arms must be byte-identical"
    );
}

#[test]
fn compare_of_a_directory_with_itself_reports_unit_ratios_and_no_significance() {
    let dir = TempDir::new().expect("tempdir");
    let arm = path_str(&dir, "arm");
    ramp_run(&arm, &["--seed", "3"], &[]);
    let out = path_str(&dir, "cmp");
    let arm = arm.to_str().unwrap();
    run_ok(&["compare", "--a", arm, "--b", arm, "--out", out.to_str().unwrap()], &[]);

    let ratio = read(&out.join("ratio.csv"));
    let mut ratio_rows = 0;
    for line in ratio.lines().skip(1) {
        let (_, value) = line.split_once(',').expect("budget,ratio");
        assert_eq!(value, "1", "self-comparison ratio must be exactly 1: {line}");
        ratio_rows += 1;
    }
    assert!(ratio_rows > 0, "ratio.csv has no data rows");

    let comparison = read(&out.join("comparison.csv"));
    assert!(comparison.lines().count() > 1, "comparison.csv has no data rows");
    for line in comparison.lines().skip(1) {
        assert!(line.ends_with(",false"), "self-comparison flagged significance: {line}");
    }
}

#[test]
fn compare_rejects_mismatched_checkpoint_grids() {
    let dir = TempDir::new().expect("tempdir");
    let coarse = path_str(&dir, "coarse");
    ramp_run(&coarse, &["--seed", "3"], &[]);
    let fine = path_str(&dir, "fine");
    run_ok(
        &[
            "run",
            "--env",
            "ramp:-1:50",
            "--stopping",
            "standard",
            "--budget",
            "500",
            "--reps",
            "2",
            "--grid",
            "20",
            "--seed",
            "3",
            "--out",
            fine.to_str().unwrap(),
        ],
        &[],
    );
    assert_exit(
        &[
            "compare",
            "--a",
            coarse.to_str().unwrap(),
            "--b",
            fine.to_str().unwrap(),
            "--out",
            path_str(&dir, "cmp").to_str().unwrap(),
        ],
        &[],
        1,
        "mismatched grids",
    );
}

#[test]
fn sweep_writes_one_final_objective_per_fraction_and_repetition() {
    let dir = TempDir::new().expect("tempdir");
    let out = path_str(&dir, "sweep");
    run_ok(
        &[
            "sweep-tgrace",
            "--env",
            "ramp:-1:50",
            "--budget",
            "500",
            "--reps",
            "2",
            "--seed",
            "3",
            "--grid",
            "10",
            "--fractions",
            "0,0.5,1",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    let sweep = read(&out.join("sweep.csv"));
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[0], "grace_fraction,rep,final_best");
    assert_eq!(lines.len(), 1 + 3 * 2, "3 fractions x 2 reps");
    assert!(lines[1].starts_with("0,0,"), "rows ordered by fraction then rep: {}", lines[1]);
    assert!(lines[6].starts_with("1,1,"), "last row is fraction 1 rep 1: {}", lines[6]);
    assert!(read(&out.join("manifest.txt")).contains("fractions=0,0.5,1"));
}

#[test]
fn recorded_archives_replay_with_all_ones_at_full_grace() {
    let dir = TempDir::new().expect("tempdir");
    let archive = path_str(&dir, "archive");
    run_ok(
        &[
            "record-archive",
            "--env",
            "ramp:-1:50",
            "--budget",
            "500",
            "--reps",
            "2",
            "--seed",
            "3",
            "--out",
            archive.to_str().unwrap(),
        ],
        &[],
    );
    assert!(archive.join("rep_0.csv").exists());
    assert!(archive.join("rep_1.csv").exists());
    assert!(
        read(&archive.join("manifest.txt")).contains("stopping=standard"),
        "archives always record under standard stopping"
    );

    let out = path_str(&dir, "replay");
    run_ok(
        &[
            "replay",
            "--archive",
            archive.to_str().unwrap(),
            "--fractions",
            "0.2,1",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    let report = read(&out.join("replay_report.csv"));
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "grace_fraction,best_not_missed,steps_computed,improves_result");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2], "1,1,1,1", "full grace must reproduce the archived run exactly");
}

#[test]
fn report_flattens_every_known_output_in_one_directory() {
    let dir = TempDir::new().expect("tempdir");
    let arm = path_str(&dir, "arm");
    ramp_run(&arm, &["--seed", "3"], &[]);
    let cmp = path_str(&dir, "cmp");
    let arm_text = arm.to_str().unwrap();
    run_ok(&["compare", "--a", arm_text, "--b", arm_text, "--out", cmp.to_str().unwrap()], &[]);
    // Collect runs.csv, ratio.csv, and comparison.csv into one directory.
    fs::copy(cmp.join("ratio.csv"), arm.join("ratio.csv")).expect("copy ratio");
    fs::copy(cmp.join("comparison.csv"), arm.join("comparison.csv")).expect("copy comparison");

    let out = path_str(&dir, "tidy");
    run_ok(&["report", "--in", arm_text, "--out", out.to_str().unwrap()], &[]);
    let report = read(&out.join("report.csv"));
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "source,metric,series,x,y");
    for needle in
        ["runs,best_objective,0,", "runs,evaluations_started,", "ratio,evaluation_ratio,,", "comparison,median_a,,"]
    {
        assert!(
            lines.iter().any(|line| line.starts_with(needle)),
            "report.csv misses rows like `{needle}`:\n{report}"
        );
    }
    // Cell text is copied verbatim: the ramp best objective stays `-50`.
    assert!(lines.contains(&"runs,best_objective,0,50,-50"), "verbatim cell copy failed");
}

#[test]
fn worker_count_does_not_change_any_output_byte() {
    let dir = TempDir::new().expect("tempdir");
    let serial = path_str(&dir, "serial");
    let parallel = path_str(&dir, "parallel");
    ramp_run(&serial, &["--seed", "3", "--jobs", "1"], &[]);
    ramp_run(&parallel, &["--seed", "3", "--jobs", "4"], &[]);
    assert_eq!(read(&serial.join("runs.csv")), read(&parallel.join("runs.csv")));
    assert_eq!(read(&serial.join("manifest.txt")), read(&parallel.join("manifest.txt")));
}
