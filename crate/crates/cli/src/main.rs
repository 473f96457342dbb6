use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Build, inspect, query and serve data portraits.
#[derive(Parser, Debug)]
#[command(name = "dportrait", version, about)]
struct Cli {
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads (build shards default to this; also sizes the server runtime).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stream a corpus into a new portrait file.
    Build(BuildArgs),
    /// Check one document against a portrait.
    Check(CheckArgs),
    /// Expected-overlap report for one or more datasets.
    Report(ReportArgs),
    /// Print portrait header fields and fill statistics.
    Stats(StatsArgs),
    /// Serve portraits over HTTP.
    Serve(ServeArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum BuildFormat {
    Jsonl,
    Text,
    Lines,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum DatasetFormat {
    Jsonl,
    Lines,
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Input files or directories; `-` reads stdin.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: BuildFormat,
    /// JSONL field holding the document text.
    #[arg(long, default_value = "text")]
    field: String,
    /// Characters per n-gram.
    #[arg(long, default_value_t = 50)]
    width: usize,
    /// Tile step; defaults to the width.
    #[arg(long)]
    stride: Option<usize>,
    /// Target false-positive rate at the planned load.
    #[arg(long, default_value_t = 1e-3)]
    fpr: f64,
    /// Planned element count, or `auto` to count tiles first.
    #[arg(long, default_value = "auto")]
    expected_elements: String,
    #[arg(long)]
    shards: Option<usize>,
    /// Hash seed recorded in the portrait header.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    portrait: PathBuf,
    /// Document to check; stdin when omitted.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Print the service's JSON response schema instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    portrait: PathBuf,
    /// Dataset files; one summary row each.
    #[arg(long, required = true, num_args = 1..)]
    dataset: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: DatasetFormat,
    #[arg(long, default_value = "text")]
    field: String,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    portrait: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Portrait files, optionally as NAME=PATH; the name defaults to the file stem.
    #[arg(long, required = true, num_args = 1..)]
    portrait: Vec<String>,
    #[arg(long, env = "DP_ADDR", default_value = "127.0.0.1:8080")]
    addr: String,
    /// Largest accepted document, in UTF-8 bytes.
    #[arg(long, env = "DP_MAX_DOC_BYTES", default_value_t = dataportrait_service::DEFAULT_MAX_DOC_BYTES)]
    max_doc_bytes: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .map(|t| t as usize)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let ctx = commands::Context { quiet: cli.quiet, threads };
    let result = match cli.command {
        Command::Build(args) => commands::build(&ctx, args),
        Command::Check(args) => commands::check(&ctx, args),
        Command::Report(args) => commands::report(&ctx, args),
        Command::Stats(args) => commands::stats(&ctx, args),
        Command::Serve(args) => commands::serve(&ctx, args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(err.exit_code())
        }
    }
}
