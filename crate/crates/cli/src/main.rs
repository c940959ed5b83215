mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use args::Cli;
use robustutil::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Input(String),
    #[error("output error: {0}")]
    Output(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 0 success, 1 input error, 2 infeasible/unbounded model, 3 numerical failure.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.root() {
                Error::InfeasibleModel(_) | Error::UnboundedDual { .. } => 2,
                Error::BracketFailure { .. }
                | Error::NonConvergence { .. }
                | Error::Convergence(_)
                | Error::Budget(_) => 3,
                _ => 1,
            },
            CliError::Input(_) => 1,
            CliError::Output(_) | CliError::Csv(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROBUSTUTIL_LOG", "warn")).init();
    if cli.common.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.threads)
        .build_global()
    {
        log::warn!("could not configure the thread pool: {e}");
    }
    let name = commands::name(&cli.command);
    let result = commands::run(&cli.command, &cli.common).and_then(|outcome| {
        output::emit(&outcome.text, cli.common.out.as_deref()).map_err(|e| {
            let path = cli
                .common
                .out
                .as_ref()
                .map_or_else(|| "<stdout>".to_string(), |p| p.display().to_string());
            CliError::Input(format!("cannot write {path}: {e}"))
        })?;
        Ok(outcome.code)
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{name}: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
