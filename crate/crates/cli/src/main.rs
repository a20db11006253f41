//! `medalforge`: batch pipeline for building abbreviation-disambiguation
//! corpora and their downstream clinical task datasets.
//!
//! Exit status is 0 on success, 1 for usage and validation errors and 2 for
//! data errors (unreadable or malformed input, failed checks).

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A problem with the invocation rather than the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "medalforge",
    version,
    about = "Abbreviation-disambiguation corpus toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// key=value file; command-line flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving all outputs and the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Drop unambiguous abbreviations and ambiguous expansions from a TSV dictionary.
    FilterMappings(commands::FilterArgs),
    /// Reverse-substitute expansions in a corpus to emit labeled samples.
    Generate(commands::GenerateArgs),
    /// Cap per-label sample counts so the subset totals about --target.
    Balance(commands::BalanceArgs),
    /// Shuffle samples into train/validation/test files.
    SplitPretrain(commands::SplitPretrainArgs),
    /// Select mortality-prediction notes and split patients by outcome.
    BuildMortality(commands::MortalityArgs),
    /// Group ICD codes into per-admission diagnosis label sets.
    BuildDiagnosis(commands::DiagnosisArgs),
    /// Corpus word and abbreviation statistics.
    Stats(commands::StatsArgs),
    /// Top-k recall of ranked diagnosis predictions.
    Eval(commands::EvalArgs),
    /// Finite-difference check of the reference attention gradients.
    AttnCheck(commands::AttnCheckArgs),
}

fn run(argv: Vec<String>) -> ExitCode {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::FilterMappings(a) => commands::filter_mappings(a),
        Command::Generate(a) => commands::generate(a),
        Command::Balance(a) => commands::balance(a),
        Command::SplitPretrain(a) => commands::split_pretrain(a),
        Command::BuildMortality(a) => commands::build_mortality(a),
        Command::BuildDiagnosis(a) => commands::build_diagnosis(a),
        Command::Stats(a) => commands::stats(a),
        Command::Eval(a) => commands::eval(a),
        Command::AttnCheck(a) => commands::attn_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn main() -> ExitCode {
    run(std::env::args().collect())
}
