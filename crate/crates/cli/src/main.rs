//! `hybrec`: command-line pipeline for the hybrid recommender.

mod commands;
mod config;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use hybrec::cf::Aggregation;
use hybrec::eval::{MinSupport, ReportFormat};
use hybrec::hybrid::RankerKind;
use hybrec::segment::{Axis, Exploration};
use hybrec::spm::{ConfidenceStrategy, Miner};

use config::parse_enum;

#[derive(Parser, Debug)]
#[command(
    name = "hybrec",
    version,
    about = "Hybrid recommender: behavior-pattern mining plus collaborative filtering"
)]
pub struct Cli {
    /// JSON pipeline config; flags override its values.
    #[arg(long, global = true, env = "HYBREC_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Accept inputs whose recorded config hash differs from the current config.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic behavior log.
    Generate(GenerateArgs),
    /// Print dataset statistics as JSON.
    Ingest(IngestArgs),
    /// Build payment-anchored behavior sequences (or open candidates with --as-of).
    Sequences(SequencesArgs),
    /// Mine frequent behavior patterns from a sequence file.
    Mine(MineArgs),
    /// Train the factor model on the log.
    Train(TrainArgs),
    /// Produce recommendations at the start of the target day.
    Recommend(RecommendArgs),
    /// Compute behavior features and group assignments.
    Segment(SegmentArgs),
    /// Run the single-target-day experiment and write a report.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    users: Option<u32>,
    #[arg(long)]
    items: Option<u32>,
    #[arg(long)]
    categories: Option<u32>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Planted pattern planted in every category, e.g. 1,3,4.
    #[arg(long)]
    pattern: Option<String>,
    /// Injection probability for --pattern.
    #[arg(long)]
    probability: Option<f64>,
    /// Noise events per user-day.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    log: Option<PathBuf>,
    /// Column roles in order, or `competition`.
    #[arg(long, default_value = "competition")]
    schema: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct WindowArgs {
    #[arg(long)]
    window_days: Option<u32>,
    /// Leave events earlier on the payment day out of its window.
    #[arg(long)]
    exclude_anchor_day: bool,
    #[arg(long)]
    target_day: Option<NaiveDate>,
}

#[derive(Args, Debug)]
struct SequencesArgs {
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    window: WindowArgs,
    /// Emit the open candidates at the first hour of the target day.
    #[arg(long)]
    candidates: bool,
    /// Print a length histogram with this bucket width.
    #[arg(long)]
    histogram: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct MiningArgs {
    /// Integer count, or a fraction of the database rounded up.
    #[arg(long)]
    min_support: Option<MinSupport>,
    #[arg(long, value_parser = parse_enum::<Miner>)]
    miner: Option<Miner>,
    #[arg(long)]
    per_category: bool,
}

#[derive(Args, Debug)]
struct MineArgs {
    #[arg(long)]
    sequences: Option<PathBuf>,
    /// Store file, or a directory of per-category stores.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    mining: MiningArgs,
}

#[derive(Args, Debug, Default)]
struct AlsArgs {
    #[arg(long)]
    factors: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_enum::<Aggregation>)]
    aggregation: Option<Aggregation>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    target_day: Option<NaiveDate>,
    #[command(flatten)]
    als: AlsArgs,
}

#[derive(Args, Debug, Default)]
struct HybridArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p_min: Option<f64>,
    #[arg(long, value_parser = parse_enum::<RankerKind>)]
    ranker: Option<RankerKind>,
    #[arg(long)]
    nncf_k: Option<usize>,
    #[arg(long, value_parser = parse_enum::<ConfidenceStrategy>)]
    strategy: Option<ConfidenceStrategy>,
    #[arg(long)]
    multi_category: bool,
    #[arg(long)]
    fallback_topn: bool,
    #[arg(long)]
    allow_repurchase: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Arm {
    Hm,
    Bm,
    Cf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum RecFormat {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "hm")]
    arm: Arm,
    #[arg(long, value_enum, default_value = "json")]
    format: RecFormat,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    mining: MiningArgs,
    #[command(flatten)]
    als: AlsArgs,
    #[command(flatten)]
    hybrid: HybridArgs,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_enum::<Axis>, default_value = "user")]
    axis: Axis,
    #[arg(long, value_parser = parse_enum::<Exploration>)]
    exploration: Option<Exploration>,
    #[arg(long)]
    target_day: Option<NaiveDate>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated: bm, hm, hm-gsp, hm-nncf, cf, cf-nncf.
    #[arg(long, value_delimiter = ',')]
    roster: Option<Vec<String>>,
    /// Report format; defaults from the output extension.
    #[arg(long)]
    format: Option<ReportFormat>,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    mining: MiningArgs,
    #[command(flatten)]
    als: AlsArgs,
    #[command(flatten)]
    hybrid: HybridArgs,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("usage error");
            eprintln!("{}", one_line(first));
            return ExitCode::from(2);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
    {
        eprintln!("error: {}", one_line(&e.to_string()));
        return ExitCode::FAILURE;
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
