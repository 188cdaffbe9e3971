mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use nutf::NutfError;

use crate::args::{Cli, Command};
use crate::commands::{CheckFailed, Run};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_INPUT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INPUT);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        // Usage errors exit 2; --help and --version exit 0.
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let threads = match cli.threads {
        Some(0) => {
            anyhow::bail!(NutfError::InvalidInput("--threads must be at least 1".into()))
        }
        Some(n) => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            n
        }
        None => rayon::current_num_threads(),
    };
    let r = Run::new(cli, threads);
    match &cli.command {
        Command::Synth(a) => commands::synth(r, a),
        Command::Preprocess(a) => commands::preprocess(r, a),
        Command::Fit(a) => commands::fit_cmd(r, a),
        Command::Predict(a) => commands::predict(r, a),
        Command::Eval(a) => commands::eval(r, a),
        Command::Bench(a) => commands::bench(r, a),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<CheckFailed>().is_some() {
        return EXIT_CHECK_FAILED;
    }
    let numerical = e
        .chain()
        .filter_map(|c| c.downcast_ref::<NutfError>())
        .any(NutfError::is_numerical);
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn errors_map_to_exit_codes() {
        let check = anyhow::Error::new(CheckFailed("ratio".into()));
        assert_eq!(exit_code(&check), EXIT_CHECK_FAILED);
        let nan: anyhow::Result<()> = Err(NutfError::NonFinite("objective".into()).into());
        assert_eq!(exit_code(&nan.context("fitting").unwrap_err()), EXIT_NUMERICAL);
        let io = anyhow::Error::new(std::io::Error::other("disk"));
        assert_eq!(exit_code(&io), EXIT_INPUT);
        assert_eq!(exit_code(&NutfError::InvalidInput("x".into()).into()), EXIT_INPUT);
    }
}
