//! Command-line pipelines over `rcnkit`: forge a corpus, train, predict,
//! benchmark and report.
//!
//! Each subcommand reads an optional key-value config file, overlays its
//! flags, and runs inside a rayon pool of the requested size. Errors are
//! classified for the exit code: 2 for configuration, 1 for everything
//! else.

pub mod args;
pub mod commands;
pub mod error;
pub mod settings;

use args::{Cli, Command, Common};
use error::{CliError, CliResult};
use settings::Settings;

/// Merges config file and flags for the chosen subcommand.
pub fn settings_for(common: &Common, command: &Command) -> CliResult<Settings> {
    let known = match command {
        Command::Forge(_) => commands::forge::KEYS,
        Command::Train(_) => commands::train::KEYS,
        Command::Predict(_) => commands::predict::KEYS,
        Command::Eval(_) => commands::eval::KEYS,
        Command::Report(_) => commands::report::KEYS,
    };
    let mut s = Settings::load(common.config.as_deref(), known)?;
    s.flag("seed", common.seed);
    s.flag("threads", common.threads);
    s.flag("out", common.out.as_ref().map(|p| p.display()));
    match command {
        Command::Forge(a) => commands::forge::apply(a, &mut s),
        Command::Train(a) => commands::train::apply(a, &mut s),
        Command::Predict(a) => commands::predict::apply(a, &mut s),
        Command::Eval(a) => commands::eval::apply(a, &mut s),
        Command::Report(a) => commands::report::apply(a, &mut s),
    }
    Ok(s)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let s = settings_for(&cli.common, &cli.command)?;
    let threads = match s.get::<usize>("threads")? {
        Some(0) => return Err(CliError::config("threads must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    log::debug!("running with {threads} threads");
    pool.install(|| match &cli.command {
        Command::Forge(_) => commands::forge::run(&s),
        Command::Train(_) => commands::train::run(&s),
        Command::Predict(_) => commands::predict::run(&s),
        Command::Eval(_) => commands::eval::run(&s),
        Command::Report(_) => commands::report::run(&s),
    })
}
