//! `stepproof` command-line interface.
//!
//! Every configuration key is a global flag (`--refine-k 3`) and may also be
//! set in a flat `key = value` file passed with `--config`; flags win over
//! the file, which wins over built-in defaults.

use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches};
use stepproof::pipeline::KEYS;
use stepproof::{Command, Pipeline, PipelineError, Settings};

/// Keys that may be given as bare switches (`--no-ground-truth`).
const SWITCHES: [&str; 2] = ["no_ground_truth", "soft_unify"];

fn about(command: Command) -> &'static str {
    match command {
        Command::Ingest => "Validate and normalize the problem file into <dir>/problems.jsonl",
        Command::Rollout => "Sample reasoning traces for every problem",
        Command::Score => "Score every trace step by step",
        Command::Refine => "Repair failing steps from prover feedback and rescore",
        Command::BuildSft => "Select the best trace per problem as fine-tuning targets",
        Command::BuildDpo => "Pair higher- and lower-scored traces per problem",
        Command::Report => "Summarize the score distribution, optionally before/after",
    }
}

fn cli() -> clap::Command {
    let mut app = clap::Command::new("stepproof")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Step-level logical scoring and refinement of reasoning traces")
        .subcommand_required(true)
        .args_override_self(true)
        .arg_required_else_help(true)
        .after_help(
            "Exit codes: 0 success, 1 data error, 2 configuration error, 3 I/O error, \
             4 backend unavailable.",
        )
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .global(true)
                .value_name("FILE")
                .help("Flat `key = value` configuration file"),
        )
        .arg(
            Arg::new("verbose")
                .long("verbose")
                .short('v')
                .global(true)
                .action(ArgAction::Count)
                .help("Log progress (-v info, -vv debug); RUST_LOG overrides"),
        );
    for &(key, help) in KEYS {
        let mut arg = Arg::new(key)
            .long(key.replace('_', "-"))
            .global(true)
            .value_name("VALUE")
            .help(help)
            .help_heading("Settings");
        if SWITCHES.contains(&key) {
            arg = arg
                .value_name("BOOL")
                .num_args(0..=1)
                .require_equals(true)
                .default_missing_value("true");
        }
        app = app.arg(arg);
    }
    for command in Command::ALL {
        app = app.subcommand(clap::Command::new(command.name()).about(about(command)));
    }
    app
}

/// Defaults, then the config file, then flags.
fn settings(matches: &ArgMatches) -> Result<Settings, PipelineError> {
    let mut settings = Settings::default();
    if let Some(path) = matches.get_one::<String>("config") {
        settings.apply_file(path.as_ref())?;
    }
    for &(key, _) in KEYS {
        if let Some(value) = matches.get_one::<String>(key) {
            settings.set(key, value)?;
        }
    }
    Ok(settings)
}

fn run(name: &str, matches: &ArgMatches) -> Result<String, PipelineError> {
    let command: Command = name.parse().map_err(PipelineError::Config)?;
    let outcome = Pipeline::new(settings(matches)?)?.run(command)?;
    log::info!("{} run {}", command.name(), outcome.manifest.run_id);
    Ok(outcome.summary)
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let level = match sub.get_count("verbose") {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(name, sub) {
        Ok(summary) => {
            let summary = summary.trim_end();
            if !summary.is_empty() {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("stepproof: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("x.conf");
        std::fs::write(&conf, "seed = 3\nrefine_k = 4\nno_ground_truth = false\n").unwrap();
        let m = cli().get_matches_from([
            "stepproof",
            "score",
            "--config",
            conf.to_str().unwrap(),
            "--refine-k",
            "5",
            "--no-ground-truth",
        ]);
        let s = settings(m.subcommand().unwrap().1).unwrap();
        assert_eq!(s.seed, 3);
        assert_eq!(s.refine_k, 5);
        assert!(s.no_ground_truth);
    }

    #[test]
    fn later_flags_win() {
        let m = cli().get_matches_from(["stepproof", "--seed", "1", "score", "--seed", "2", "--seed", "3"]);
        assert_eq!(settings(m.subcommand().unwrap().1).unwrap().seed, 3);
    }

    #[test]
    fn flags_before_the_subcommand() {
        let m = cli().get_matches_from(["stepproof", "--seed", "9", "--soft-unify=false", "report"]);
        let s = settings(m.subcommand().unwrap().1).unwrap();
        assert_eq!(s.seed, 9);
        assert!(!s.soft_unify);
    }
}
