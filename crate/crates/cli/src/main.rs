mod args;
mod commands;
mod error;
mod pipeline;

use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command, DEFAULT_SEED};
use commands::Context;
use error::{CliError, CliResult};
use pipeline::PipelineConfig;

fn init_logging(quiet: bool) {
    let level = if quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RUST_LOG")
        .format(|buf, record| match record.level() {
            log::Level::Info => writeln!(buf, "{}", record.args()),
            level => writeln!(buf, "{}\t{}", level.as_str().to_lowercase(), record.args()),
        })
        .init();
}

fn env_threads() -> CliResult<Option<usize>> {
    match std::env::var("BITEXT_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::usage(format!("BITEXT_THREADS must be a positive integer, got {v:?}"))),
        _ => Ok(None),
    }
}

fn init_threads(threads: Option<usize>) -> CliResult {
    let Some(n) = threads else {
        return Ok(());
    };
    if n == 0 {
        return Err(CliError::usage("thread count must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(e.to_string()))
}

fn run(cli: Cli) -> CliResult {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match &cli.command {
        Command::Pipeline(a) => {
            let cfg = PipelineConfig::read(&a.config)?;
            init_threads(cli.threads.or(cfg.threads).or(env_threads()?))?;
            pipeline::run(&cfg, &a.config, seed, a.dry_run)
        }
        command => {
            init_threads(cli.threads.or(env_threads()?))?;
            commands::dispatch(command, &Context { seed })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                let _ = e.print();
                return ExitCode::from(2);
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let err = CliError::usage(first.trim_start_matches("error: "));
            eprintln!("{}", err.report_line());
            return ExitCode::from(err.exit_code());
        }
    };
    init_logging(cli.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report_line());
            ExitCode::from(e.exit_code())
        }
    }
}
