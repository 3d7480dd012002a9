use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mod_bench::{
    bench_flush_model, measure_growth, measure_sharing, parse_size, run_bench, BenchConfig,
    BenchError, BenchWorkload,
};

#[derive(Parser)]
#[command(name = "bench", about = "Benchmarks for the durable datastructures")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Ratio of live structure bytes at n2 elements to those at n1.
    Growth {
        #[arg(long, value_parser = parse_workload)]
        workload: BenchWorkload,
        #[arg(long)]
        n1: u64,
        #[arg(long)]
        n2: u64,
        #[arg(long, default_value = "1G", value_parser = parse_bytes)]
        arena_size: u64,
    },
    /// New bytes allocated per single-element update of a large map or vector.
    Sharing {
        #[arg(long, value_parser = parse_workload)]
        workload: BenchWorkload,
        #[arg(long, default_value_t = 1_000_000)]
        elements: u64,
        #[arg(long, default_value_t = 1000)]
        updates: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "1G", value_parser = parse_bytes)]
        arena_size: u64,
    },
    /// Fits the flush-latency model to a measurement CSV.
    Flushmodel {
        #[arg(long)]
        csv: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_workload)]
    workload: Option<BenchWorkload>,
    #[arg(long, default_value_t = 100_000)]
    iters: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Map value size in bytes.
    #[arg(long, default_value_t = 8)]
    value_size: u64,
    #[arg(long, default_value = "1G", value_parser = parse_bytes)]
    arena_size: u64,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Vector elements loaded before measuring.
    #[arg(long, default_value_t = 4096)]
    prefill: u64,
    #[arg(long, default_value_t = 10_000)]
    graph_nodes: u64,
    #[arg(long, default_value_t = 12)]
    graph_degree: u64,
}

fn parse_workload(s: &str) -> Result<BenchWorkload, String> {
    s.parse().map_err(|e: BenchError| e.to_string())
}

fn parse_bytes(s: &str) -> Result<u64, String> {
    parse_size(s).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Some(Command::Growth {
            workload,
            n1,
            n2,
            arena_size,
        }) => {
            println!("{}", measure_growth(workload, n1, n2, arena_size)?);
        }
        Some(Command::Sharing {
            workload,
            elements,
            updates,
            seed,
            arena_size,
        }) => {
            println!(
                "{}",
                measure_sharing(workload, elements, updates, seed, arena_size)?
            );
        }
        Some(Command::Flushmodel { csv }) => {
            println!("{}", bench_flush_model(File::open(csv)?)?);
        }
        None => {
            let a = cli.run;
            let workload = a
                .workload
                .ok_or_else(|| BenchError::InvalidConfig("--workload is required".into()))?;
            let cfg = BenchConfig {
                workload,
                iterations: a.iters,
                seed: a.seed,
                value_size: a.value_size,
                arena_size: a.arena_size,
                report_path: a.report,
                trace_path: a.trace,
                prefill: a.prefill,
                graph_nodes: a.graph_nodes,
                graph_degree: a.graph_degree,
            };
            println!("{}", run_bench(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bench: {e}");
            ExitCode::FAILURE
        }
    }
}
