//! File-level drivers behind each CLI subcommand. Every `run_*` function
//! reads only its inputs and writes only into its output directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{classify_batch, BatchConfig, ClassificationOutcome, Classifier, Strategy};
use crate::cluster::{
    cluster_terms, hdbscan_with, pca_reduce_with, propagate_cluster_labels, ClusterParams, EmbeddingMatrix,
    Selection,
};
use crate::evaluate::{confusion, crosstab_user_types, metrics};
use crate::exec::ExecMode;
use crate::gateway::{
    accumulate_cost, Backend, Gateway, GatewayConfig, HttpBackend, HttpBackendConfig, PricingTable,
    RecordingBackend, ReplayBackend, RetryPolicy, Usage,
};
use crate::ingest::{dedup_descriptions, description_stats, parse_reports, Description, Report, Source};
use crate::tagchain::{
    filter_self_deposits, load_deposits, loss_stats_by_type, loss_stats_to_csv, render_loss_table,
    revenue_by_type, tag_addresses, tags_from_csv, tags_to_csv,
};
use crate::taxonomy::{load_taxonomy, Taxonomy};

/// A failure with the module it came from.
#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[error("{module}: {message}")]
pub struct PipelineError {
    pub module: String,
    pub message: String,
}

impl PipelineError {
    pub fn new(module: &str, err: impl Display) -> Self {
        PipelineError {
            module: module.to_string(),
            message: err.to_string(),
        }
    }

    /// `{"error":{"module":..,"message":..}}`
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(module: &'static str) -> impl Fn(std::io::Error) -> PipelineError {
    move |e| PipelineError::new(module, e)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::new(
            "cli",
            format!("{what} file {} does not exist", path.display()),
        ))
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| PipelineError::new("cli", format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str, module: &'static str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| PipelineError::new(module, format!("cannot write {}: {e}", path.display())))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> std::result::Result<Vec<T>, String> {
    let file = std::fs::File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn taxonomy_from(path: Option<&Path>) -> Result<Taxonomy> {
    match path {
        Some(p) => {
            require_file(p, "taxonomy")?;
            load_taxonomy(p).map_err(|e| PipelineError::new("taxonomy", e))
        }
        None => Ok(Taxonomy::shipped()),
    }
}

/// Optional JSON config; command-line flags take precedence over it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub taxonomy: Option<PathBuf>,
    pub pricing: Option<PathBuf>,
    pub strategy: Option<Strategy>,
    pub model: Option<String>,
    pub backend: Option<BackendKind>,
    pub fixtures: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub concurrency: Option<usize>,
    pub max_retries: Option<u32>,
    pub answer_retries: Option<u32>,
    pub exclusions: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        require_file(path, "config")?;
        let text = std::fs::read_to_string(path).map_err(io_err("cli"))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::new("cli", format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Replay,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "replay" => Ok(BackendKind::Replay),
            "http" => Ok(BackendKind::Http),
            other => Err(format!("unknown backend `{other}` (expected replay or http)")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub ba: Vec<PathBuf>,
    pub bbb: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub reports: usize,
    pub rejects: usize,
    pub descriptions: crate::ingest::DescriptionStats,
}

/// Writes `reports.jsonl`, `descriptions.jsonl`, `rejects.jsonl`, `stats.json`.
pub fn run_ingest(opts: &IngestOptions) -> Result<IngestSummary> {
    if opts.ba.is_empty() && opts.bbb.is_empty() {
        return Err(PipelineError::new("cli", "ingest needs at least one --ba or --bbb file"));
    }
    let inputs: Vec<(&PathBuf, Source)> = opts
        .ba
        .iter()
        .map(|p| (p, Source::Bitcoinabuse))
        .chain(opts.bbb.iter().map(|p| (p, Source::Bbb)))
        .collect();
    for (p, _) in &inputs {
        require_file(p, "report")?;
    }
    prepare_dir(&opts.out_dir)?;
    let mut reports = Vec::new();
    let mut rejects = Vec::new();
    for (p, source) in inputs {
        let parsed = parse_reports(p, source).map_err(|e| PipelineError::new("ingest", format!("{}: {e}", p.display())))?;
        reports.extend(parsed.reports);
        rejects.extend(parsed.rejects);
    }
    let descs = dedup_descriptions(&reports);
    let summary = IngestSummary {
        reports: reports.len(),
        rejects: rejects.len(),
        descriptions: description_stats(&descs),
    };
    let out = &opts.out_dir;
    write_jsonl(&out.join("reports.jsonl"), &reports).map_err(io_err("ingest"))?;
    write_jsonl(&out.join("descriptions.jsonl"), &descs).map_err(io_err("ingest"))?;
    write_jsonl(&out.join("rejects.jsonl"), &rejects).map_err(io_err("ingest"))?;
    let stats = serde_json::to_string_pretty(&summary).expect("serializable") + "\n";
    write_file(&out.join("stats.json"), &stats, "ingest")?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    pub descriptions: PathBuf,
    pub taxonomy: Option<PathBuf>,
    pub pricing: PathBuf,
    pub strategy: Strategy,
    pub model: String,
    pub backend: BackendKind,
    pub fixtures: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub concurrency: usize,
    pub max_retries: u32,
    pub answer_retries: u32,
    /// Write every response seen as replay fixtures to this file.
    pub record: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifySummary {
    pub descriptions: usize,
    pub classified: usize,
    pub unclassified: usize,
    pub queries: u64,
}

/// Writes `outcomes.jsonl`, `cost.csv`, `cost.txt`.
pub fn run_classify(opts: &ClassifyOptions) -> Result<ClassifySummary> {
    require_file(&opts.descriptions, "descriptions")?;
    require_file(&opts.pricing, "pricing")?;
    let taxonomy = taxonomy_from(opts.taxonomy.as_deref())?;
    let pricing = PricingTable::load(&opts.pricing).map_err(|e| PipelineError::new("llm_gateway", e))?;
    pricing
        .rates(&opts.model)
        .map_err(|e| PipelineError::new("llm_gateway", e))?;
    let descs: Vec<Description> = read_jsonl(&opts.descriptions).map_err(|e| PipelineError::new("ingest", e))?;
    let backend: Arc<dyn Backend> = match opts.backend {
        BackendKind::Replay => {
            let path = opts
                .fixtures
                .as_deref()
                .ok_or_else(|| PipelineError::new("cli", "the replay backend needs --fixtures"))?;
            require_file(path, "fixtures")?;
            Arc::new(ReplayBackend::from_jsonl(path).map_err(|e| PipelineError::new("llm_gateway", e))?)
        }
        BackendKind::Http => {
            let endpoint = opts
                .endpoint
                .clone()
                .ok_or_else(|| PipelineError::new("cli", "the http backend needs --endpoint"))?;
            let mut cfg = HttpBackendConfig::new(endpoint);
            // A named key variable must be set; without one, requests go unauthenticated.
            if let Some(env) = &opts.api_key_env {
                if std::env::var(env).map_or(true, |k| k.is_empty()) {
                    return Err(PipelineError::new(
                        "llm_gateway",
                        format!("environment variable {env} is not set"),
                    ));
                }
                cfg.api_key_env = env.clone();
            }
            Arc::new(HttpBackend::new(&cfg).map_err(|e| PipelineError::new("llm_gateway", e))?)
        }
    };
    prepare_dir(&opts.out_dir)?;
    let gateway_config = GatewayConfig {
        max_in_flight: opts.concurrency.max(1),
        retry: RetryPolicy {
            max_retries: opts.max_retries,
            ..RetryPolicy::default()
        },
    };
    let recorder = opts.record.as_ref().map(|_| Arc::new(RecordingBackend::new(backend.clone())));
    let gateway = match &recorder {
        Some(r) => Gateway::new(r.clone(), gateway_config),
        None => Gateway::new(backend, gateway_config),
    };
    let mut classifier = Classifier::new(&taxonomy, &gateway, opts.model.clone());
    classifier.answer_retries = opts.answer_retries;
    let batch = BatchConfig {
        concurrency: opts.concurrency.max(1),
        exec: ExecMode::Parallel,
    };
    let result = classify_batch(&descs, opts.strategy, &classifier, &pricing, batch)
        .map_err(|e| PipelineError::new("classify", e))?;
    if let (Some(r), Some(path)) = (&recorder, &opts.record) {
        r.write_jsonl(path).map_err(io_err("llm_gateway"))?;
    }
    let out = &opts.out_dir;
    write_jsonl(&out.join("outcomes.jsonl"), &result.outcomes).map_err(io_err("classify"))?;
    write_file(&out.join("cost.csv"), &result.cost.to_csv(), "classify")?;
    write_file(&out.join("cost.txt"), &result.cost.render_table(), "classify")?;
    let classified = result.outcomes.iter().filter(|o| o.is_ok()).count();
    Ok(ClassifySummary {
        descriptions: descs.len(),
        classified,
        unclassified: descs.len() - classified,
        queries: result.cost.total.queries,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub outcomes: PathBuf,
    /// CSV with header `sha256,label`.
    pub gold: PathBuf,
    pub taxonomy: Option<PathBuf>,
    /// Reports with user-selected types, for the crosstab.
    pub reports: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSummary {
    pub gold: usize,
    pub scored: usize,
    pub unclassified: usize,
    pub missing: usize,
    pub weighted_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Deserialize)]
struct GoldRow {
    sha256: String,
    label: String,
}

pub fn read_gold(path: &Path) -> Result<BTreeMap<String, String>> {
    require_file(path, "gold")?;
    let mut r = csv::Reader::from_path(path).map_err(|e| PipelineError::new("evaluate", e))?;
    let mut out = BTreeMap::new();
    for row in r.deserialize::<GoldRow>() {
        let row = row.map_err(|e| PipelineError::new("evaluate", format!("{}: {e}", path.display())))?;
        if let Some(prev) = out.insert(row.sha256.clone(), row.label.clone()) {
            if prev != row.label {
                return Err(PipelineError::new(
                    "evaluate",
                    format!("conflicting gold labels for {}", row.sha256),
                ));
            }
        }
    }
    Ok(out)
}

/// Writes `metrics.csv`, `metrics.txt`, `confusion.csv` and, with
/// reports, `crosstab.csv`.
pub fn run_evaluate(opts: &EvaluateOptions) -> Result<EvaluateSummary> {
    require_file(&opts.outcomes, "outcomes")?;
    let taxonomy = taxonomy_from(opts.taxonomy.as_deref())?;
    let gold = read_gold(&opts.gold)?;
    for (sha, label) in &gold {
        if !taxonomy.contains(label) {
            return Err(PipelineError::new(
                "evaluate",
                format!("gold label `{label}` for {sha} is not a taxonomy type"),
            ));
        }
    }
    let outcomes: Vec<ClassificationOutcome> =
        read_jsonl(&opts.outcomes).map_err(|e| PipelineError::new("classify", e))?;
    let reports: Option<Vec<Report>> = match &opts.reports {
        Some(p) => {
            require_file(p, "reports")?;
            Some(read_jsonl(p).map_err(|e| PipelineError::new("ingest", e))?)
        }
        None => None,
    };
    prepare_dir(&opts.out_dir)?;
    let predicted: HashMap<&str, Option<&str>> = outcomes
        .iter()
        .map(|o| (o.description_sha256.as_str(), o.label.as_deref()))
        .collect();
    let mut pairs = Vec::new();
    let (mut unclassified, mut missing) = (0, 0);
    for (sha, label) in &gold {
        match predicted.get(sha.as_str()) {
            Some(Some(p)) => pairs.push((label.as_str(), *p)),
            Some(None) => unclassified += 1,
            None => missing += 1,
        }
    }
    let order: Vec<&str> = taxonomy.types().iter().map(|t| t.name.as_str()).collect();
    let cm = confusion(&pairs, &order);
    let report = metrics(&cm).map_err(|e| PipelineError::new("evaluate", e))?;
    let out = &opts.out_dir;
    write_file(&out.join("metrics.csv"), &report.to_csv(), "evaluate")?;
    let header = format!(
        "gold descriptions: {}\nscored: {}\nunclassified: {unclassified}\nwithout outcome: {missing}\n\n",
        gold.len(),
        pairs.len()
    );
    write_file(&out.join("metrics.txt"), &(header + &report.render_table("all")), "evaluate")?;
    write_file(&out.join("confusion.csv"), &cm.to_csv(), "evaluate")?;
    if let Some(reports) = reports {
        let rows: Vec<(String, String)> = reports
            .iter()
            .filter_map(|r| {
                let ba = r.ba_type.as_ref()?;
                let g = gold.get(&r.description_sha256())?;
                Some((ba.clone(), g.clone()))
            })
            .collect();
        let ct = crosstab_user_types(&rows);
        write_file(&out.join("crosstab.csv"), &ct.to_csv(&order), "evaluate")?;
    }
    Ok(EvaluateSummary {
        gold: gold.len(),
        scored: pairs.len(),
        unclassified,
        missing,
        weighted_f1: report.weighted.f1,
        macro_f1: report.macro_avg.f1,
    })
}

#[derive(Debug, Clone)]
pub struct ClusterOptions {
    pub embeddings: PathBuf,
    pub descriptions: Option<PathBuf>,
    pub variance: f64,
    pub params: ClusterParams,
    /// CSV with header `cluster_id,label`.
    pub labels: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub top_terms: usize,
    pub out_dir: PathBuf,
}

impl ClusterOptions {
    pub fn new(embeddings: PathBuf, out_dir: PathBuf) -> Self {
        ClusterOptions {
            embeddings,
            descriptions: None,
            variance: 0.7,
            params: ClusterParams::default(),
            labels: None,
            taxonomy: None,
            top_terms: 25,
            out_dir,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub descriptions: usize,
    pub components: usize,
    pub explained_ratio: f64,
    pub clusters: usize,
    pub singletons: usize,
    pub max_cluster_size: usize,
    pub propagated: usize,
    pub selection: Selection,
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    cluster_id: u32,
    label: String,
}

/// Writes `assignments.jsonl`, `cluster_sizes.csv`, `summary.json`,
/// `terms/cluster_<id>.csv` (with descriptions) and `propagated.csv` (with
/// labels).
pub fn run_cluster(opts: &ClusterOptions) -> Result<ClusterSummary> {
    require_file(&opts.embeddings, "embeddings")?;
    opts.params.validate().map_err(|e| PipelineError::new("cluster", e))?;
    let matrix = EmbeddingMatrix::load(&opts.embeddings).map_err(|e| PipelineError::new("cluster", e))?;
    let descs: Option<Vec<Description>> = match &opts.descriptions {
        Some(p) => {
            require_file(p, "descriptions")?;
            Some(read_jsonl(p).map_err(|e| PipelineError::new("ingest", e))?)
        }
        None => None,
    };
    let labeled: Option<BTreeMap<u32, String>> = match &opts.labels {
        Some(p) => {
            require_file(p, "labels")?;
            let mut r = csv::Reader::from_path(p).map_err(|e| PipelineError::new("cluster", e))?;
            let mut m = BTreeMap::new();
            for row in r.deserialize::<LabelRow>() {
                let row = row.map_err(|e| PipelineError::new("cluster", format!("{}: {e}", p.display())))?;
                m.insert(row.cluster_id, row.label);
            }
            Some(m)
        }
        None => None,
    };
    let taxonomy = taxonomy_from(opts.taxonomy.as_deref())?;
    prepare_dir(&opts.out_dir)?;

    let pca = pca_reduce_with(matrix.values(), opts.variance, ExecMode::Parallel)
        .map_err(|e| PipelineError::new("cluster", e))?;
    let assignment = hdbscan_with(matrix.ids(), &pca.reduced, &opts.params, ExecMode::Parallel)
        .map_err(|e| PipelineError::new("cluster", e))?;

    let out = &opts.out_dir;
    write_jsonl(&out.join("assignments.jsonl"), &assignment.records()).map_err(io_err("cluster"))?;
    let mut sizes = String::from("cluster_id,size\n");
    for (c, n) in assignment.sizes() {
        sizes.push_str(&format!("{c},{n}\n"));
    }
    write_file(&out.join("cluster_sizes.csv"), &sizes, "cluster")?;

    if let Some(descs) = &descs {
        let dir = out.join("terms");
        prepare_dir(&dir)?;
        for &c in assignment.sizes().keys() {
            let terms = cluster_terms(&assignment, c, descs, opts.top_terms)
                .map_err(|e| PipelineError::new("cluster", e))?;
            let mut s = String::from("term,frequency\n");
            for (t, f) in terms {
                s.push_str(&format!("{t},{f}\n"));
            }
            write_file(&dir.join(format!("cluster_{c}.csv")), &s, "cluster")?;
        }
    }

    let mut propagated = 0;
    if let Some(labeled) = &labeled {
        let map = propagate_cluster_labels(&assignment, labeled, &taxonomy)
            .map_err(|e| PipelineError::new("cluster", e))?;
        propagated = map.len();
        let mut s = String::from("sha256,label\n");
        for (sha, l) in map {
            s.push_str(&format!("{sha},{l}\n"));
        }
        write_file(&out.join("propagated.csv"), &s, "cluster")?;
    }

    let summary = ClusterSummary {
        descriptions: matrix.nrows(),
        components: pca.k(),
        explained_ratio: pca.explained_ratio,
        clusters: assignment.cluster_count(),
        singletons: assignment.singletons(),
        max_cluster_size: assignment.sizes().values().copied().max().unwrap_or(0),
        propagated,
        selection: opts.params.selection,
    };
    let json = serde_json::to_string_pretty(&summary).expect("serializable") + "\n";
    write_file(&out.join("summary.json"), &json, "cluster")?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct TagOptions {
    pub reports: PathBuf,
    pub outcomes: PathBuf,
    pub taxonomy: Option<PathBuf>,
    pub source: Option<String>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSummary {
    pub addresses: usize,
    pub tagged: usize,
    pub untagged: usize,
}

/// Writes `tags.csv`, `untagged.txt`, `loss.csv`, `loss.txt`.
pub fn run_tag(opts: &TagOptions) -> Result<TagSummary> {
    require_file(&opts.reports, "reports")?;
    require_file(&opts.outcomes, "outcomes")?;
    let taxonomy = taxonomy_from(opts.taxonomy.as_deref())?;
    let reports: Vec<Report> = read_jsonl(&opts.reports).map_err(|e| PipelineError::new("ingest", e))?;
    let outcomes: Vec<ClassificationOutcome> =
        read_jsonl(&opts.outcomes).map_err(|e| PipelineError::new("classify", e))?;
    prepare_dir(&opts.out_dir)?;
    let source = opts.source.clone().unwrap_or_else(|| {
        let mut kinds: Vec<String> = outcomes
            .iter()
            .map(|o| format!("{}/{}", o.strategy, o.model_id))
            .collect();
        kinds.sort();
        kinds.dedup();
        format!("majority_vote:{}", kinds.join("+"))
    });
    let tagging = tag_addresses(&reports, &outcomes, &taxonomy, &source);
    let out = &opts.out_dir;
    write_file(&out.join("tags.csv"), &tags_to_csv(&tagging.tags), "tagchain")?;
    let mut untagged = tagging.untagged.join("\n");
    if !untagged.is_empty() {
        untagged.push('\n');
    }
    write_file(&out.join("untagged.txt"), &untagged, "tagchain")?;
    let loss = loss_stats_by_type(&reports, &outcomes, &taxonomy);
    write_file(&out.join("loss.csv"), &loss_stats_to_csv(&loss), "tagchain")?;
    write_file(&out.join("loss.txt"), &render_loss_table(&loss), "tagchain")?;
    Ok(TagSummary {
        addresses: tagging.tags.len() + tagging.untagged.len(),
        tagged: tagging.tags.len(),
        untagged: tagging.untagged.len(),
    })
}

#[derive(Debug, Clone)]
pub struct RevenueOptions {
    pub tags: PathBuf,
    pub deposits: PathBuf,
    /// One address per line; blank lines and `#` comments ignored.
    pub exclusions: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevenueSummary {
    pub deposits: usize,
    pub self_deposits: usize,
    pub total_satoshi: u128,
}

/// Writes `revenue.csv`, `revenue.txt`.
pub fn run_revenue(opts: &RevenueOptions) -> Result<RevenueSummary> {
    require_file(&opts.tags, "tags")?;
    require_file(&opts.deposits, "deposits")?;
    let taxonomy = taxonomy_from(opts.taxonomy.as_deref())?;
    let tags_file = std::fs::File::open(&opts.tags).map_err(io_err("tagchain"))?;
    let tags = tags_from_csv(tags_file).map_err(|e| PipelineError::new("tagchain", e))?;
    let deposits = load_deposits(&opts.deposits).map_err(|e| PipelineError::new("tagchain", e))?;
    let exclusions: Vec<String> = match &opts.exclusions {
        Some(p) => {
            require_file(p, "exclusions")?;
            std::fs::read_to_string(p)
                .map_err(io_err("tagchain"))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect()
        }
        None => Vec::new(),
    };
    prepare_dir(&opts.out_dir)?;
    let kept = filter_self_deposits(&deposits);
    let report = revenue_by_type(&tags, &kept, &exclusions, &taxonomy);
    write_file(&opts.out_dir.join("revenue.csv"), &report.to_csv(), "tagchain")?;
    write_file(&opts.out_dir.join("revenue.txt"), &report.render_table(), "tagchain")?;
    Ok(RevenueSummary {
        deposits: deposits.len(),
        self_deposits: deposits.len() - kept.len(),
        total_satoshi: report.total.satoshi,
    })
}

#[derive(Debug, Clone)]
pub struct CostReportOptions {
    pub outcomes: PathBuf,
    pub pricing: PathBuf,
    pub out_dir: PathBuf,
}

/// Re-prices an outcomes file; writes `cost.csv`, `cost.txt`.
pub fn run_cost_report(opts: &CostReportOptions) -> Result<crate::gateway::CostReport> {
    require_file(&opts.outcomes, "outcomes")?;
    require_file(&opts.pricing, "pricing")?;
    let pricing = PricingTable::load(&opts.pricing).map_err(|e| PipelineError::new("llm_gateway", e))?;
    let outcomes: Vec<ClassificationOutcome> =
        read_jsonl(&opts.outcomes).map_err(|e| PipelineError::new("classify", e))?;
    let usages: Vec<(String, Usage)> = outcomes.iter().flat_map(|o| o.usage_records()).collect();
    let report = accumulate_cost(&usages, &pricing).map_err(|e| PipelineError::new("llm_gateway", e))?;
    prepare_dir(&opts.out_dir)?;
    write_file(&opts.out_dir.join("cost.csv"), &report.to_csv(), "llm_gateway")?;
    write_file(&opts.out_dir.join("cost.txt"), &report.render_table(), "llm_gateway")?;
    Ok(report)
}
