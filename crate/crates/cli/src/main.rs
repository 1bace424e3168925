use std::process::ExitCode;

use clap::Parser;

use cohallo_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COHALLO_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            if let Some(text) = text {
                print!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{} failed: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
