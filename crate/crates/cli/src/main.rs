mod cli;
mod commands;
mod output;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};
use commands::{Context, FileConfig};

/// Failures mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config (exit code 1).
    Usage(String),
    /// Bad data, checkpoint or model state (exit code 2).
    Data(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<gspn::GspnError> for CliError {
    fn from(e: gspn::GspnError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", cli.workers)))?;
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Context {
        file,
        seed: cli.seed,
        metrics: cli.metrics.clone(),
    };
    match &cli.command {
        Command::TrainUnsup(a) => commands::train_unsup(&ctx, a),
        Command::TrainSup(a) => commands::train_sup(&ctx, a),
        Command::EvalPll(a) => commands::eval_pll(&ctx, a),
        Command::EvalMissingNll(a) => commands::eval_missing_nll(&ctx, a),
        Command::Impute(a) => commands::impute_cmd(&ctx, a),
        Command::Embed(a) => commands::embed(&ctx, a),
        Command::QueryPerturb(a) => commands::query_perturb(&ctx, a),
        Command::Classify(a) => commands::classify(&ctx, a),
        Command::Baseline(a) => commands::baseline(&ctx, a),
        Command::Mask(a) => commands::mask(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GSPN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
