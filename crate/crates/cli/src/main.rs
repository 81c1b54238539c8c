//! `sesame`: dataset generation, bundle handling, probing, confusion
//! analysis and reports.

mod analysis;
mod encode;
mod generate;
mod output;
mod probe_cmd;
mod report;
mod svg;

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use output::Outputs;

#[derive(Parser)]
#[command(name = "sesame", version, about = "Layerwise probes and attention confusion scores")]
struct Cli {
    /// Worker threads for parallel jobs (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate datasets from the built-in grammars or a text corpus.
    Generate(generate::GenerateArgs),
    /// Check a bundle directory against the format invariants.
    ValidateBundle(encode::ValidateArgs),
    /// Encode dataset sentences with the deterministic mock encoder.
    MockEncode(encode::MockEncodeArgs),
    /// Train and evaluate layerwise probes.
    Probe(probe_cmd::ProbeArgs),
    /// Compute confusion scores per condition and layer.
    Confusion(analysis::ConfusionArgs),
    /// Fit the regression of confusion scores on condition predictors.
    Regress(analysis::RegressArgs),
    /// Draw charts and summary tables from earlier outputs.
    Report(report::ReportArgs),
}

fn run(cli: Cli, out: &Outputs) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Generate(a) => generate::run(a, out),
        Command::ValidateBundle(a) => encode::validate(a),
        Command::MockEncode(a) => encode::mock_encode(a, out),
        Command::Probe(a) => probe_cmd::run(a, out),
        Command::Confusion(a) => analysis::confusion(a, out),
        Command::Regress(a) => analysis::regress(a, out),
        Command::Report(a) => report::run(a, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = Outputs::default();
    match run(cli, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            out.discard();
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
