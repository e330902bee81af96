//! Regenerates the replay fixtures and golden outputs under `fixtures/e2e`.
//!
//! Responses come from a keyword-matching stand-in for a model, so the
//! fixtures exercise every traversal path without network access. Run from
//! the workspace root:
//!
//! ```text
//! cargo run --example record_fixtures -- fixtures/e2e
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use abuse_triage::classify::{classify_batch, BatchConfig, Classifier, Strategy};
use abuse_triage::gateway::{
    estimate_tokens, Backend, BackendError, BackendReply, CompletionRequest, Gateway, GatewayConfig,
    PricingTable, RecordingBackend, RetryPolicy, Usage,
};
use abuse_triage::ingest::Description;
use abuse_triage::pipeline::{self, BackendKind};
use abuse_triage::taxonomy::Taxonomy;

const MODEL: &str = "fixture-model";

/// First matching keyword decides the intended leaf; `None` means garbage output.
const RULES: &[(&str, Option<&str>)] = &[
    ("webcam", Some("sextortion")),
    ("encrypted", Some("ransom")),
    ("deleted", Some("deleteransom")),
    ("bomb", Some("bomb")),
    ("giveaway", Some("giveaway")),
    ("invest", Some("investment")),
    ("trading", Some("investment")),
    ("dating", Some("romance")),
    ("clipboard", Some("clipper")),
    ("shop", Some("eshop")),
    ("recovery", Some("fundsrecovery")),
    ("lottery", Some("advancefee")),
    ("hacked", Some("unauthwithdrawal")),
    ("reviews", Some("reputation")),
    ("ddos", Some("ddos")),
    ("hurt", Some("harm")),
    ("scam", Some("scam")),
    ("threatening", Some("extortion")),
    ("suspicious", Some("abuse")),
    ("zzzz", None),
];

struct KeywordModel {
    taxonomy: Taxonomy,
}

impl KeywordModel {
    fn intended(text: &str) -> Option<&'static str> {
        let lower = text.to_lowercase();
        RULES
            .iter()
            .find(|(k, _)| lower.contains(k))
            .map_or(Some("notabuse"), |(_, t)| *t)
    }

    fn answer(&self, target: &str, classes: &[String]) -> String {
        if classes.iter().any(|c| c == target) {
            return target.to_string();
        }
        if let Some(anc) = classes
            .iter()
            .find(|c| self.taxonomy.is_ancestor(c, target).unwrap_or(false))
        {
            return anc.clone();
        }
        if let Some(s) = classes.iter().find(|c| c.ends_with("_other")) {
            return s.clone();
        }
        classes[0].clone()
    }
}

impl Backend for KeywordModel {
    fn send(&self, req: &CompletionRequest) -> Result<BackendReply, BackendError> {
        let prompt = &req.prompt.text;
        let text = prompt
            .split_once("\n\nTEXT: ")
            .and_then(|(_, rest)| rest.split_once("\n\nQUESTION: "))
            .map(|(t, _)| t)
            .unwrap_or_default();
        let reply = match Self::intended(text) {
            None => "I am not able to classify this text.".to_string(),
            Some(target) => {
                let answer = self.answer(target, &req.prompt.class_names);
                let json = serde_json::json!({
                    "answer": answer,
                    "reasoning": format!("The text matches the definition of {answer}."),
                });
                if target == "giveaway" {
                    format!("Sure.\n```json\n{json}\n```")
                } else {
                    json.to_string()
                }
            }
        };
        let usage = Usage::new(estimate_tokens(prompt), estimate_tokens(&reply));
        Ok(BackendReply {
            text: reply,
            usage: Some(usage),
        })
    }
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/e2e".into()));
    let taxonomy = Taxonomy::shipped();
    let scratch = tempfile::tempdir().expect("temp dir");

    let ingest_dir = scratch.path().join("ingest");
    pipeline::run_ingest(&pipeline::IngestOptions {
        ba: vec![dir.join("ba.jsonl")],
        bbb: vec![dir.join("bbb.jsonl")],
        out_dir: ingest_dir.clone(),
    })
    .expect("ingest");
    let descs: Vec<Description> =
        pipeline::read_jsonl(&ingest_dir.join("descriptions.jsonl")).expect("descriptions");

    let recorder = Arc::new(RecordingBackend::new(KeywordModel {
        taxonomy: taxonomy.clone(),
    }));
    let gateway = Gateway::new(
        recorder.clone(),
        GatewayConfig {
            max_in_flight: 4,
            retry: RetryPolicy::no_delay(0),
        },
    );
    let classifier = Classifier::new(&taxonomy, &gateway, MODEL);
    let pricing = PricingTable::load(dir.join("pricing.json")).expect("pricing");
    for strategy in Strategy::ALL {
        classify_batch(&descs, strategy, &classifier, &pricing, BatchConfig::default()).expect("classify");
    }
    recorder.write_jsonl(dir.join("replay.jsonl")).expect("write fixtures");
    println!("recorded {} responses", recorder.records().len());

    write_golden(&dir, &dir.join("expected"));
}

/// Runs the replay pipeline and stores its outputs as the golden copy.
fn write_golden(dir: &Path, out: &Path) {
    let _ = std::fs::remove_dir_all(out);
    let ingest = out.join("ingest");
    pipeline::run_ingest(&pipeline::IngestOptions {
        ba: vec![dir.join("ba.jsonl")],
        bbb: vec![dir.join("bbb.jsonl")],
        out_dir: ingest.clone(),
    })
    .expect("ingest");
    for strategy in Strategy::ALL {
        let classify = out.join(format!("classify_{strategy}"));
        pipeline::run_classify(&pipeline::ClassifyOptions {
            descriptions: ingest.join("descriptions.jsonl"),
            taxonomy: None,
            pricing: dir.join("pricing.json"),
            strategy,
            model: MODEL.into(),
            backend: BackendKind::Replay,
            fixtures: Some(dir.join("replay.jsonl")),
            endpoint: None,
            api_key_env: None,
            concurrency: 4,
            max_retries: 0,
            answer_retries: 2,
            record: None,
            out_dir: classify.clone(),
        })
        .expect("classify");
        pipeline::run_evaluate(&pipeline::EvaluateOptions {
            outcomes: classify.join("outcomes.jsonl"),
            gold: dir.join("gold.csv"),
            taxonomy: None,
            reports: Some(ingest.join("reports.jsonl")),
            out_dir: out.join(format!("evaluate_{strategy}")),
        })
        .expect("evaluate");
    }
    let outcomes = out.join("classify_top_to_bottom").join("outcomes.jsonl");
    pipeline::run_tag(&pipeline::TagOptions {
        reports: ingest.join("reports.jsonl"),
        outcomes,
        taxonomy: None,
        source: None,
        out_dir: out.join("tag"),
    })
    .expect("tag");
    pipeline::run_revenue(&pipeline::RevenueOptions {
        tags: out.join("tag").join("tags.csv"),
        deposits: dir.join("deposits.jsonl"),
        exclusions: Some(dir.join("exclusions.txt")),
        taxonomy: None,
        out_dir: out.join("revenue"),
    })
    .expect("revenue");
    println!("golden outputs written to {}", out.display());
}
