//! `dfq`: run the data-free quantization pipeline from the command line.

mod failure;
mod inspect;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Parser)]
#[command(name = "dfq", version, about = "Data-free post-training quantization")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-channel weight statistics of every affine layer.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        /// JSON report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the statistics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Fold batch norm first, showing the weights that get quantized.
        #[arg(long)]
        fold_bn: bool,
    },
    /// Transform, quantize and evaluate a model.
    Run(RunArgs),
    /// Render the JSON reports of a run directory as text tables.
    Report {
        /// Run directory, or a single inspect JSON file.
        #[arg(long)]
        input: PathBuf,
        /// Text output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic model and its self-labeled dataset.
    Generate {
        /// Output directory; receives model.json and data.json.
        #[arg(long)]
        out: PathBuf,
        /// JSON generator spec; unspecified fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON pipeline configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset for evaluation and empirical bias correction.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Bitwidth of weights and activations.
    #[arg(long)]
    pub bits: Option<u8>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Weight grid granularity; activations are always per tensor.
    #[arg(long, value_enum)]
    pub granularity: Option<GranularityArg>,
    /// Comma-separated step list; an empty string runs no step.
    #[arg(long)]
    pub steps: Option<String>,
    /// Also rerun the pipeline at every bitwidth of the sweep.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Sym,
    Asym,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum GranularityArg {
    Tensor,
    Channel,
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Inspect {
            model,
            out,
            csv,
            fold_bn,
        } => inspect::inspect(&model, out.as_deref(), csv.as_deref(), fold_bn),
        Command::Run(args) => run::run(&args),
        Command::Report { input, out } => report::report(&input, out.as_deref()),
        Command::Generate { out, config, seed } => run::generate(&out, config.as_deref(), seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { failure::CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
