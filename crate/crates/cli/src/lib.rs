//! Command-line front end of `mirrorpose`: file formats, verbs and exit
//! codes. The binary is a thin wrapper around [`run`].

pub mod args;
pub mod commands;
pub mod error;
pub mod export;
pub mod formats;
pub mod io;

pub use args::Cli;
pub use error::{exit, CliError, CliResult};

use args::Command;

pub fn run(cli: &Cli) -> CliResult<()> {
    if let Command::Config(c) = &cli.command {
        return commands::config(c);
    }
    let ctx = commands::Context::new(&cli.global)?;
    match &cli.command {
        Command::Reconstruct(a) => commands::reconstruct(&ctx, a),
        Command::Calibrate(a) => commands::calibrate_scene(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, &cli.global, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::SweepFocal(a) => commands::sweep(&ctx, a),
        Command::Config(_) => unreachable!("handled above"),
    }
}
