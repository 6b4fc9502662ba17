//! `lcma`: run, validate, schedule, and reason about lower-complexity
//! matrix multiplication schemes from the command line.

mod args;
mod commands;
mod io;

use clap::{CommandFactory, Parser};

#[derive(Parser)]
#[command(
    name = "lcma",
    version,
    about = "Lower-complexity matrix multiplication: executors, validation, scheduling, and the selection model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Check schemes against the exact bilinear product identity.
    Validate(args::ValidateArgs),
    /// Print the builtin scheme catalog.
    List,
    /// Multiply two matrix text files with a chosen executor.
    Multiply(args::MultiplyArgs),
    /// Time one shape against the plain blocked baseline (CSV).
    Bench(args::BenchArgs),
    /// Replay a shape list through selection and both executors (CSV).
    Sweep(args::SweepArgs),
    /// Predict the fastest algorithm for a shape under a profile.
    Decide(args::DecideArgs),
    /// Plan a split-group schedule and dump its wave table (CSV).
    ScheduleSim(args::ScheduleSimArgs),
    /// Compare executor rounding error against a 64-bit oracle (CSV).
    Precision(args::PrecisionArgs),
    /// Tabulate modeled effective FLOPS across intensities (CSV).
    Roofline(args::RooflineArgs),
    /// Measure this machine and write a hardware profile file.
    Calibrate(args::CalibrateArgs),
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Validate(a) => {
            if !a.builtin && a.paths.is_empty() {
                Cli::command()
                    .error(
                        clap::error::ErrorKind::MissingRequiredArgument,
                        "pass --builtin and/or at least one scheme file",
                    )
                    .exit();
            }
            commands::cmd_validate(a)
        }
        Command::List => commands::cmd_list(),
        Command::Multiply(a) => commands::cmd_multiply(a),
        Command::Bench(a) => commands::cmd_bench(a),
        Command::Sweep(a) => commands::cmd_sweep(a),
        Command::Decide(a) => commands::cmd_decide(a),
        Command::ScheduleSim(a) => commands::cmd_schedule_sim(a),
        Command::Precision(a) => commands::cmd_precision(a),
        Command::Roofline(a) => commands::cmd_roofline(a),
        Command::Calibrate(a) => commands::cmd_calibrate(a),
    }
}
