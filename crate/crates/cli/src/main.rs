use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use biocon_cli::commands::default_out;
use biocon_cli::{run, CliError, Command, RawConfig, RunOptions};

#[derive(Parser)]
#[command(name = "biocon", version, about = "Phototactic bioconvection: basic states, neutral curves, critical points")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Basic-state profiles.
    BasicState(Common),
    /// Intensity in a uniform suspension.
    UniformIntensity(Common),
    /// Neutral branches over the configured k range.
    NeutralCurve(Common),
    /// Critical point of each parameter set.
    Critical(Common),
    /// Reproduces one of the golden tables.
    Table(Common),
    /// Critical points over the cartesian product of parameter lists.
    Sweep(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BIOCON_LOG", "warn")).init();
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Cmd::BasicState(c) => (Command::BasicState, c),
        Cmd::UniformIntensity(c) => (Command::UniformIntensity, c),
        Cmd::NeutralCurve(c) => (Command::NeutralCurve, c),
        Cmd::Critical(c) => (Command::Critical, c),
        Cmd::Table(c) => (Command::Table, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
    };
    match execute(cmd, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cmd: Command, common: Common) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|source| CliError::Io { path: common.config.clone(), source })?;
    let config = RawConfig::parse(&text)?;
    let opts = RunOptions {
        config,
        out: common.out.unwrap_or_else(|| default_out().to_path_buf()),
        jobs: common.jobs,
    };
    let report = run(cmd, &opts)?;
    for line in &report.lines {
        println!("{line}");
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
