use std::path::PathBuf;
use std::process::ExitCode;

use calabi_lab::commands::{cmd_flow, cmd_geodesic, cmd_report, cmd_scan, cmd_spectrum, cmd_sweep, RunOptions};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "calabi-lab", version, about = "Calabi flow experiments on the torus and the sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random presets (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn options(self) -> RunOptions {
        RunOptions { config: self.config, out: self.out, seed: self.seed, quiet: self.quiet, resume: None }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow and check its invariants
    Flow {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint manifest
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Solve for the geodesic between two potentials
    Geodesic(Common),
    /// Low spectrum of the initial metric
    Spectrum(Common),
    /// Concentration scan of the initial metric
    Scan(Common),
    /// Summarize a run directory
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Independent flow runs over seeds and presets
    Sweep(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Flow { common, resume } => cmd_flow(&RunOptions { resume, ..common.options() }),
        Command::Geodesic(c) => cmd_geodesic(&c.options()),
        Command::Spectrum(c) => cmd_spectrum(&c.options()),
        Command::Scan(c) => cmd_scan(&c.options()),
        Command::Report { run_dir, quiet } => cmd_report(&run_dir, quiet),
        Command::Sweep(c) => cmd_sweep(&c.options()),
    };
    let status = match result {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            e.status()
        }
    };
    ExitCode::from(status.code() as u8)
}
