use std::process::ExitCode;

use clap::Parser;
use rcnkit_cli::args::Cli;
use rcnkit_cli::error::CliError;

fn main() -> ExitCode {
    let filter = std::env::var("RCNKIT_LOG").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new().parse_filters(&filter).format_timestamp(None).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::config(e.kind());
            eprintln!("{}", err.machine_line());
            return ExitCode::from(2);
        }
    };
    match rcnkit_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", e.machine_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
