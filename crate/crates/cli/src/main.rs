use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ergobsde_cli::{run, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ergobsde", version, about = "Ergodic BSDE experiments from TOML scenarios")]
struct Args {
    #[arg(value_enum)]
    subcommand: Subcommand,
    scenario: PathBuf,
    /// Override a scenario key, e.g. `--set solver.n_paths=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to the scenario's `[outputs] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args.subcommand, &args.scenario, &args.overrides, args.out.as_deref()) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
