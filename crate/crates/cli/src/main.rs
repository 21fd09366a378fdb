mod args;
mod commands;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn run(cli: &Cli) -> Result<(), CliError> {
    commands::prepare_out(&cli.out)?;
    match &cli.command {
        Command::Train(a) => commands::train(cli, a),
        Command::Eval(a) => commands::eval(cli, a),
        Command::Report(a) => commands::report(cli, a),
        Command::Explain(a) => commands::explain(cli, a),
        Command::Cluster(a) => commands::cluster(cli, a),
        Command::Tsne(a) => commands::tsne_cmd(cli, a),
        Command::TuneThreshold(a) => commands::tune_threshold(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
