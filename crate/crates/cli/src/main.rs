use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smoothnet_cli::{run, Command, Invocation};

#[derive(Parser)]
#[command(name = "smoothnet", version, about = "Multitask diffusion over graphs: theory, simulation and sweeps")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overrides output.dir
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo seed, overrides algorithm.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Closed-form steady-state MSD over the mu and eta grids
    Theory(Common),
    /// Monte Carlo learning curves with the theory overlaid
    Simulate(Common),
    /// Steady-state bias over the mu and eta grids with slope fits
    BiasScan(Common),
    /// MSD relative to the targets over an eta grid, and its minimizer
    SweepEta(Common),
    /// Low-pass graph filter response over eta and lambda
    FilterResponse(Common),
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (command, common) = match args.command {
        Cmd::Theory(c) => (Command::Theory, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::BiasScan(c) => (Command::BiasScan, c),
        Cmd::SweepEta(c) => (Command::SweepEta, c),
        Cmd::FilterResponse(c) => (Command::FilterResponse, c),
    };
    if let Some(jobs) = common.jobs {
        if jobs == 0 || rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().is_err() {
            eprintln!("error: --jobs must be a positive thread count");
            return ExitCode::from(2);
        }
    }
    let inv = Invocation { command, config: common.config, out: common.out, seed: common.seed };
    match run(&inv) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
