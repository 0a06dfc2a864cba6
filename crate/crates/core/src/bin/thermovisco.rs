use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thermovisco::cli;
use thermovisco::oracles::DEFAULT_SEED;
use thermovisco::study::StudyMode;
use thermovisco::MaterialParams;

#[derive(Parser)]
#[command(name = "thermovisco", version, about = "Staggered thermo-viscoelastic simulator with energy auditing")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write ledger, snapshots and manifest.
    Run { config: PathBuf, outdir: PathBuf },
    /// Run a refinement ladder and compare the levels.
    Study {
        config: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: StudyMode,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        outdir: PathBuf,
        /// Run the levels concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Run the oracle suites and print the JSON report.
    Verify {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn parse_mode(s: &str) -> Result<StudyMode, String> {
    s.parse().map_err(|e: thermovisco::Error| e.to_string())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut err = std::io::stderr();
    let code = match args.command {
        Command::Run { config, outdir } => cli::cmd_run(&config, &outdir, &mut err),
        Command::Study {
            config,
            mode,
            levels,
            outdir,
            parallel,
        } => cli::cmd_study(&config, mode, levels, &outdir, parallel, &mut err),
        Command::Verify { seed } => cli::cmd_verify(&MaterialParams::default(), seed, &mut std::io::stdout(), &mut err),
    };
    ExitCode::from(code as u8)
}
