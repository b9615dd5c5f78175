//! Scenario-driven experiment runner.
//!
//! `ergobsde <subcommand> <scenario.toml> [--set key=value ...] [--out dir]`
//! parses a strict TOML scenario, runs one pipeline stage and writes CSV,
//! JSON and plot-data files plus a checksummed manifest.

pub mod error;
pub mod output;
pub mod pipeline;
pub mod scenario;

use std::path::{Path, PathBuf};

use clap::ValueEnum;

pub use error::CliError;
use output::OutputWriter;
use scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subcommand {
    /// Standing assumptions, driver constants and the dissipativity certificate.
    Validate,
    /// Moment and contraction statistics of the forward paths.
    Simulate,
    /// Vanishing-discount estimate of `λ` and `v̄`.
    Ergodic,
    /// Mild HJB identity and long-time ratio.
    Hjb,
    /// Policy costs and optimality gaps.
    Control,
    /// Plot series and a summary from earlier outputs.
    Report,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Validate => "validate",
            Subcommand::Simulate => "simulate",
            Subcommand::Ergodic => "ergodic",
            Subcommand::Hjb => "hjb",
            Subcommand::Control => "control",
            Subcommand::Report => "report",
        }
    }
}

/// Runs one subcommand and returns the output directory.
///
/// The manifest is written even when a validation check fails, so the
/// report that explains the failure is inventoried.
pub fn run(
    sub: Subcommand,
    scenario_path: &Path,
    overrides: &[String],
    out_dir: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let sc = Scenario::load(scenario_path, overrides)?;
    let dir = sc.output_dir(scenario_path, out_dir);
    let mut out = OutputWriter::create(&dir)?;
    let result = match sub {
        Subcommand::Validate => pipeline::validate(&sc, &mut out),
        Subcommand::Simulate => pipeline::simulate_stats(&sc, &mut out),
        Subcommand::Ergodic => pipeline::ergodic(&sc, &mut out),
        Subcommand::Hjb => pipeline::hjb(&sc, &mut out),
        Subcommand::Control => pipeline::control(&sc, &mut out),
        Subcommand::Report => pipeline::report(&sc, &mut out),
    };
    if result.is_ok() || !out.files().is_empty() {
        out.finish(sub.name(), &sc.name, &sc.hash())?;
    }
    result.map(|_| dir)
}
