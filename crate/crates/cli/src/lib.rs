//! The `plugblend` command line: planning, generation, fidelity sweeps,
//! perplexity grids and the HTTP servers.
//!
//! Exit codes are 0 on success, 1 for usage or config errors, 2 when a
//! model or classifier backend fails and 3 for bad input data.

pub mod commands;
pub mod config;
mod error;

pub use commands::{
    cmd_baseline, cmd_eval_ppl, cmd_export_toy, cmd_generate, cmd_plan, cmd_sweep, dispatch,
    load_sketch, render_story, PlanOutput, Report,
};
pub use config::{Cli, Command, GlobalArgs, ProviderSpec, Settings};
pub use error::{CliError, CliResult, ExitKind};

/// Resolves settings and runs the parsed command line.
pub fn run(cli: &Cli) -> CliResult<Report> {
    let settings = Settings::resolve(&cli.global)?;
    dispatch(&settings, &cli.command)
}
