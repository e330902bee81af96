use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use abuse_triage::classify::Strategy;
use abuse_triage::cluster::{ClusterParams, Selection};
use abuse_triage::pipeline::{
    self, BackendKind, ClassifyOptions, ClusterOptions, CostReportOptions, EvaluateOptions, IngestOptions,
    PipelineConfig, PipelineError, RevenueOptions, TagOptions,
};

#[derive(Parser)]
#[command(name = "abuse-triage", version, about = "Classify cryptocurrency abuse reports with chained LLM queries")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse report files, deduplicate descriptions.
    Ingest(IngestArgs),
    /// Classify descriptions into the taxonomy.
    Classify(ClassifyArgs),
    /// Score outcomes against gold labels.
    Evaluate(EvaluateArgs),
    /// PCA + HDBSCAN over description embeddings.
    Cluster(ClusterArgs),
    /// Tag addresses by majority vote over report labels.
    Tag(TagArgs),
    /// Revenue per abuse type from address deposits.
    Revenue(RevenueArgs),
    /// Re-price an outcomes file.
    CostReport(CostReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// BitcoinAbuse JSON Lines file (repeatable).
    #[arg(long)]
    ba: Vec<PathBuf>,
    /// BBB scam-tracker JSON Lines file (repeatable).
    #[arg(long)]
    bbb: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    descriptions: PathBuf,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    pricing: Option<PathBuf>,
    /// one_query, top_to_bottom or bottom_to_top.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    model: Option<String>,
    /// replay or http.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Replay fixtures (JSON Lines).
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Chat-completions URL for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Transport-level retries per query.
    #[arg(long)]
    max_retries: Option<u32>,
    /// Re-asks after an unusable answer.
    #[arg(long)]
    answer_retries: Option<u32>,
    /// Save every response as replay fixtures.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    outcomes: PathBuf,
    /// CSV with columns sha256,label.
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Reports file; enables the user-type crosstab.
    #[arg(long)]
    reports: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Descriptions file; enables per-cluster term tables.
    #[arg(long)]
    descriptions: Option<PathBuf>,
    /// Explained-variance ratio kept by PCA.
    #[arg(long, default_value_t = 0.7)]
    variance: f64,
    #[arg(long, default_value_t = 2)]
    min_samples: usize,
    #[arg(long, default_value_t = 5)]
    min_cluster_size: usize,
    /// eom or leaf.
    #[arg(long, default_value = "eom")]
    selection: Selection,
    /// CSV with columns cluster_id,label to propagate.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    top_terms: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    reports: PathBuf,
    #[arg(long)]
    outcomes: PathBuf,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Provenance written to the tags file.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RevenueArgs {
    #[arg(long)]
    tags: PathBuf,
    /// Deposit records (JSON Lines).
    #[arg(long)]
    deposits: PathBuf,
    /// Addresses to leave out, one per line.
    #[arg(long)]
    exclusions: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CostReportArgs {
    #[arg(long)]
    outcomes: PathBuf,
    #[arg(long)]
    pricing: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn missing(flag: &str) -> PipelineError {
    PipelineError::new("cli", format!("--{flag} is required (flag or config file)"))
}

fn print_summary<T: Serialize>(summary: &T) {
    println!("{}", serde_json::to_string(summary).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => print_summary(&pipeline::run_ingest(&IngestOptions {
            ba: a.ba,
            bbb: a.bbb,
            out_dir: a.out_dir,
        })?),
        Command::Classify(a) => {
            let opts = ClassifyOptions {
                descriptions: a.descriptions,
                taxonomy: a.taxonomy.or(cfg.taxonomy),
                pricing: a.pricing.or(cfg.pricing).ok_or_else(|| missing("pricing"))?,
                strategy: a.strategy.or(cfg.strategy).ok_or_else(|| missing("strategy"))?,
                model: a.model.or(cfg.model).ok_or_else(|| missing("model"))?,
                backend: a.backend.or(cfg.backend).unwrap_or(BackendKind::Replay),
                fixtures: a.fixtures.or(cfg.fixtures),
                endpoint: a.endpoint.or(cfg.endpoint),
                api_key_env: a.api_key_env.or(cfg.api_key_env),
                concurrency: a.concurrency.or(cfg.concurrency).unwrap_or(4),
                max_retries: a.max_retries.or(cfg.max_retries).unwrap_or(5),
                answer_retries: a.answer_retries.or(cfg.answer_retries).unwrap_or(2),
                record: a.record,
                out_dir: a.out_dir,
            };
            print_summary(&pipeline::run_classify(&opts)?);
        }
        Command::Evaluate(a) => print_summary(&pipeline::run_evaluate(&EvaluateOptions {
            outcomes: a.outcomes,
            gold: a.gold,
            taxonomy: a.taxonomy.or(cfg.taxonomy),
            reports: a.reports,
            out_dir: a.out_dir,
        })?),
        Command::Cluster(a) => {
            let mut opts = ClusterOptions::new(a.embeddings, a.out_dir);
            opts.descriptions = a.descriptions;
            opts.variance = a.variance;
            opts.params = ClusterParams {
                min_samples: a.min_samples,
                min_cluster_size: a.min_cluster_size,
                selection: a.selection,
                ..ClusterParams::default()
            };
            opts.labels = a.labels;
            opts.taxonomy = a.taxonomy.or(cfg.taxonomy);
            opts.top_terms = a.top_terms;
            print_summary(&pipeline::run_cluster(&opts)?);
        }
        Command::Tag(a) => print_summary(&pipeline::run_tag(&TagOptions {
            reports: a.reports,
            outcomes: a.outcomes,
            taxonomy: a.taxonomy.or(cfg.taxonomy),
            source: a.source,
            out_dir: a.out_dir,
        })?),
        Command::Revenue(a) => print_summary(&pipeline::run_revenue(&RevenueOptions {
            tags: a.tags,
            deposits: a.deposits,
            exclusions: a.exclusions.or(cfg.exclusions),
            taxonomy: a.taxonomy.or(cfg.taxonomy),
            out_dir: a.out_dir,
        })?),
        Command::CostReport(a) => {
            let report = pipeline::run_cost_report(&CostReportOptions {
                outcomes: a.outcomes,
                pricing: a.pricing.or(cfg.pricing).ok_or_else(|| missing("pricing"))?,
                out_dir: a.out_dir,
            })?;
            print!("{}", report.render_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
