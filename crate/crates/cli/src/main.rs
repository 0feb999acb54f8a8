//! `rfa` — operator entry points for the review feedback agent:
//! arm assignment, single pipeline runs, live serving, and analysis.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "rfa", version, about = "Review feedback agent")]
struct Cli {
    /// Optional key=value config file; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Randomly split papers into the three experiment arms.
    Assign(AssignArgs),
    /// Run the feedback pipeline once for a paper and a review.
    Run(RunArgs),
    /// Poll a forum, schedule delayed runs, post gated feedback, log events.
    Serve(ServeArgs),
    /// Analysis over event logs, verdicts, and clusters.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Args)]
pub struct AssignArgs {
    /// JSONL of {"paper_id": ...} records.
    #[arg(long)]
    papers: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
pub struct ProviderArgs {
    /// "mock" or "live".
    #[arg(long)]
    provider: Option<String>,
    /// Mock script JSONL (required with --provider mock).
    #[arg(long)]
    script: Option<PathBuf>,
    /// Template directory; defaults to the built-in templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Model name for the live provider.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
pub struct RunArgs {
    /// Paper source: .txt or .pdf.
    #[arg(long)]
    paper: PathBuf,
    /// Review record: JSON object or single-line JSONL.
    #[arg(long)]
    review: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    max_attempts: Option<u32>,
    #[arg(long)]
    salt: Option<String>,
    /// Bundle output path (JSON). Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the postable body on success.
    #[arg(long)]
    print_body: bool,
}

#[derive(Args)]
pub struct ServeArgs {
    /// Forum mock store: directory of per-review thread JSON files.
    #[arg(long)]
    forum_dir: PathBuf,
    /// Directory of <paper_id>.txt / <paper_id>.pdf sources.
    #[arg(long)]
    papers_dir: PathBuf,
    #[arg(long)]
    assignments: PathBuf,
    /// Event log path (JSONL, appended).
    #[arg(long)]
    events: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    delay: Option<i64>,
    #[arg(long)]
    poll_interval: Option<i64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_attempts: Option<u32>,
    #[arg(long)]
    salt: Option<String>,
    /// Exit when all discovered reviews reached a terminal state.
    #[arg(long)]
    run_until_idle: bool,
    /// Start a simulated clock at this time instead of the system clock
    /// (useful with --run-until-idle for reproducible batch runs).
    #[arg(long)]
    sim_clock_start: Option<i64>,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Classify every review in the log as updated or not.
    Updates(UpdatesArgs),
    /// Judge incorporation of feedback items on updated reviews.
    Incorporation(IncorporationArgs),
    /// Cluster all feedback items and merge labels into the verdict file.
    Clusters(ClustersArgs),
    /// Full statistics report (JSON plus optional table dump).
    Report(ReportArgs),
}

#[derive(Args)]
pub struct UpdatesArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    review_period_end: Option<i64>,
}

#[derive(Args)]
pub struct IncorporationArgs {
    #[arg(long)]
    events: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    review_period_end: Option<i64>,
}

#[derive(Args)]
pub struct ClustersArgs {
    #[arg(long)]
    events: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cluster summary output (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Verdict file to merge cluster labels into (rewritten in place).
    #[arg(long)]
    verdicts: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    verdicts: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Table dump path.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    review_period_end: Option<i64>,
    #[arg(long)]
    rebuttal_period_end: Option<i64>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let file_config = config::FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Assign(args) => commands::assign(args, &file_config),
        Command::Run(args) => commands::run(args, &file_config).await,
        Command::Serve(args) => commands::serve(args, &file_config).await,
        Command::Analyze(AnalyzeCommand::Updates(args)) => commands::analyze_updates(args),
        Command::Analyze(AnalyzeCommand::Incorporation(args)) => {
            commands::analyze_incorporation(args, &file_config).await
        }
        Command::Analyze(AnalyzeCommand::Clusters(args)) => {
            commands::analyze_clusters(args, &file_config).await
        }
        Command::Analyze(AnalyzeCommand::Report(args)) => commands::analyze_report(args),
    }
}
