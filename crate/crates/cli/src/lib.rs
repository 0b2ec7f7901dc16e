//! `volcap` command-line front end.

pub mod args;
mod commands;
pub mod error;

use std::ffi::OsString;

use clap::Parser;

pub use args::Cli;
use args::Command;
use error::CliError;

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::usage(first));
            return error::EXIT_VALIDATION;
        }
    };
    init_logging(cli.verbose);
    let result = match &cli.command {
        Command::FilterDepth(a) => commands::filter_depth(a),
        Command::StereoDepth(a) => commands::stereo(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Render(a) => commands::render(a),
        Command::Pack(a) => commands::pack(a),
        Command::Sync(a) => commands::sync(a),
        Command::Run(a) => commands::run(a),
        Command::Info(a) => commands::info(a),
        Command::Score(a) => commands::score(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code
        }
    }
}
