//! Batch front end for the consensus segmentation pipeline.

mod compare;
mod config;
mod manifest;
mod run;
mod synth_cmd;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sce", version, about = "Ensemble-averaged unsupervised image segmentation")]
struct Cli {
    /// Worker threads (default: all cores). Outputs are identical for any
    /// value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-channel raster with ground-truth labels.
    Synth(SynthCliArgs),
    /// Run the full pipeline: normalize, train the SOM grid, stack, rank,
    /// and threshold consensus masks.
    Run(RunCliArgs),
    /// Compare two run directories: consensus-vs-consensus and SOM-vs-SOM.
    Compare(CompareCliArgs),
}

#[derive(Args)]
struct SynthCliArgs {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    /// Number of circular islands.
    #[arg(long, default_value_t = 0)]
    islands: usize,
    /// Number of thin sheets.
    #[arg(long, default_value_t = 0)]
    sheets: usize,
    /// Gaussian noise level added to every channel.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Island radius range in pixels, as `min,max`.
    #[arg(long, default_value = "4,8")]
    island_radius: String,
    /// Sheet thickness range in pixels, as `min,max`.
    #[arg(long, default_value = "2,4")]
    sheet_thickness: String,
    /// Output directory for raster.frst and truth.pgm.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunCliArgs {
    /// Input FRST raster(s); comma-separate snapshots for stacked training.
    #[arg(long, required = true, value_delimiter = ',')]
    input: Vec<PathBuf>,
    /// Flat key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; every random stream derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parent directory for the run_<seed>_<confighash> output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also render stacked maps as log-scaled 16-bit PGM.
    #[arg(long)]
    export_pgm: bool,
    /// Also write max-normalized [0,1] views of the stacked maps.
    #[arg(long)]
    export_norm: bool,
}

#[derive(Args)]
struct CompareCliArgs {
    /// First run directory.
    #[arg(long)]
    a: PathBuf,
    /// Second run directory.
    #[arg(long)]
    b: PathBuf,
    /// Consensus threshold whose masks are compared.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Where to write the comparison CSVs and summary.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure {threads} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result: Result<()> = match cli.command {
        Command::Synth(args) => synth_cmd::cmd_synth(&synth_cmd::SynthArgs {
            width: args.width,
            height: args.height,
            islands: args.islands,
            sheets: args.sheets,
            noise: args.noise,
            seed: args.seed,
            island_radius: args.island_radius,
            sheet_thickness: args.sheet_thickness,
            out: args.out,
        }),
        Command::Run(args) => run::cmd_run(&run::RunArgs {
            inputs: args.input,
            config: args.config,
            seed: args.seed,
            out: args.out,
            export_pgm: args.export_pgm,
            export_norm: args.export_norm,
        }),
        Command::Compare(args) => compare::cmd_compare(&compare::CompareArgs {
            a: args.a,
            b: args.b,
            tau: args.tau,
            out: args.out,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
