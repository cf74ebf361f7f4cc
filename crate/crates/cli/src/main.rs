//! `blockattn`: segment text, train the cut head, distill a block-attention
//! student, simulate KV caches and benchmark prefill.
//!
//! Results go to standard output as JSON, logs to standard error
//! (`RUST_LOG` controls the level). Exit codes: 0 ok, 2 usage or config
//! error, 3 data error.

mod distill;
mod run;
mod segment;
mod sim;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use run::Run;

#[derive(Debug, Parser)]
#[command(name = "blockattn", version, about = "Block attention toolkit")]
struct Cli {
    /// Seed for every random stream; overrides a seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split text into blocks.
    Segment(segment::SegmentArgs),
    /// Train a cut head on a segmentation corpus.
    TrainSegmenter(segment::TrainSegmenterArgs),
    /// Distill a block-attention student from a full-attention teacher.
    Distill(distill::DistillArgs),
    /// Compare prefix and block cache hit rates on a request trace.
    SimulateCache(sim::SimulateArgs),
    /// Time full versus block prefill of the toy model.
    Bench(sim::BenchArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let run = Run {
        seed: cli.seed,
        out: cli.out.clone(),
        config: cli.config.clone(),
        args: std::env::args().skip(1).collect(),
    };
    let outcome = match &cli.command {
        Command::Segment(a) => segment::segment(&run, a),
        Command::TrainSegmenter(a) => segment::train_segmenter(&run, a),
        Command::Distill(a) => distill::distill(&run, a),
        Command::SimulateCache(a) => sim::simulate_cache(&run, a),
        Command::Bench(a) => sim::bench(&run, a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
