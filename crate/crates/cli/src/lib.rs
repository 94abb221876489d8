//! Command-line front end for the `sgmm` library: simulation, fitting,
//! prediction, evaluation, heatmaps and replicate runs. All file formats
//! live in [`format`].

pub mod args;
pub mod commands;
pub mod error;
pub mod format;

use args::{Cli, Command};
use error::{CliError, CliResult};

/// Sizes the global worker pool. Every parallel loop in the library maps
/// in order, so the thread count never changes an output byte.
pub fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // A second call within one process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Heatmap(a) => commands::heatmap(a),
        Command::Repro(a) => commands::repro(a),
    }
}
