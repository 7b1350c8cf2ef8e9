use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evgs::app::{run, Command};

#[derive(Parser)]
#[command(name = "evgs", version, about = "Event-only Gaussian splatting")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Dotted override, e.g. `--set schedule.k_end=20000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a ground-truth orbit and convert it into events.
    Simulate(Common),
    /// Optimise a Gaussian scene from events and priors.
    Train(Common),
    /// Render a checkpoint at trajectory timestamps or explicit poses.
    Render(Common),
    /// Compare rendered views with references after log-space alignment.
    Eval(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Render(c) => (Command::Render, c),
        Cmd::Eval(c) => (Command::Eval, c),
    };
    ExitCode::from(run(command, &common.config, &common.overrides) as u8)
}
