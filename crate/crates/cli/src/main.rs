use std::process::ExitCode;

use clap::Parser;
use log::{error, info};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = beerla_cli::Cli::parse();
    match cli.run() {
        Ok(files) => {
            info!("wrote {} file(s)", files.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
