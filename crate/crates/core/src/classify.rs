//! Taxonomy traversal strategies over the prompt and gateway modules.
//!
//! * one-query: a single prompt with every definition.
//! * top-to-bottom: descend from the level-1 types, offering the children
//!   of the previous answer plus `ttb_other`; `ttb_other` stops at the
//!   current node.
//! * bottom-to-top: start at the deepest level with `btt_other`, ascend a
//!   level each time `btt_other` is chosen; the level-1 query has no escape.
//!
//! Stages for one description are strictly sequential; batches fan out
//! across descriptions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::exec::ExecMode;
use crate::gateway::{
    accumulate_cost, CompletionRequest, CostError, CostReport, Gateway, PricingTable, Usage,
};
use crate::ingest::Description;
use crate::prompt::{parse_llm_answer, render_query, Stage, SyntheticClass, BTT_OTHER, TTB_OTHER};
use crate::taxonomy::{AbuseType, Selector, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    OneQuery,
    TopToBottom,
    BottomToTop,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::OneQuery, Strategy::TopToBottom, Strategy::BottomToTop];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::OneQuery => "one_query",
            Strategy::TopToBottom => "top_to_bottom",
            Strategy::BottomToTop => "bottom_to_top",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "one_query" => Ok(Strategy::OneQuery),
            "top_to_bottom" => Ok(Strategy::TopToBottom),
            "bottom_to_top" => Ok(Strategy::BottomToTop),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Unclassified,
}

/// One stage of a classification chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: Stage,
    /// Classes offered by the prompt, in prompt order.
    pub classes: Vec<String>,
    pub prompt_sha256: String,
    /// Output of the last query issued at this stage.
    pub raw_answer: String,
    pub parsed_answer: Option<String>,
    pub reasoning: String,
    /// Sum of `query_usages`.
    pub usage: Usage,
    pub usage_estimated: bool,
    /// Usage of each billed query at this stage, answer re-asks included.
    pub query_usages: Vec<Usage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationOutcome {
    pub description_sha256: String,
    pub strategy: Strategy,
    pub model_id: String,
    pub status: Status,
    /// Final abuse type; `None` iff unclassified.
    pub label: Option<String>,
    pub trace: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl ClassificationOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    /// Number of billed queries, retries included.
    pub fn queries(&self) -> usize {
        self.trace.iter().map(|t| t.query_usages.len()).sum()
    }

    /// One `(model, usage)` pair per billed query.
    pub fn usage_records(&self) -> impl Iterator<Item = (String, Usage)> + '_ {
        self.trace
            .iter()
            .flat_map(|t| t.query_usages.iter())
            .map(|u| (self.model_id.clone(), *u))
    }
}

/// Runs the traversal strategies against one model.
pub struct Classifier<'a> {
    taxonomy: &'a Taxonomy,
    gateway: &'a Gateway,
    model_id: String,
    /// Re-asks with the identical prompt after an unparseable answer.
    pub answer_retries: u32,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

enum StageError {
    Failed(Box<TraceEntry>, String),
    /// The prompt could not even be rendered.
    Prompt(String),
}

impl<'a> Classifier<'a> {
    pub fn new(taxonomy: &'a Taxonomy, gateway: &'a Gateway, model_id: impl Into<String>) -> Self {
        Classifier {
            taxonomy,
            gateway,
            model_id: model_id.into(),
            answer_retries: 2,
            max_output_tokens: 512,
            temperature: 0.0,
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        self.taxonomy
    }

    fn ask(
        &self,
        text: &str,
        classes: &[&AbuseType],
        synthetic: Option<&SyntheticClass>,
        stage: Stage,
    ) -> Result<TraceEntry, StageError> {
        let prompt =
            render_query(text, classes, synthetic, stage).map_err(|e| StageError::Prompt(e.to_string()))?;
        let mut entry = TraceEntry {
            stage,
            classes: prompt.class_names.clone(),
            prompt_sha256: prompt.sha256(),
            raw_answer: String::new(),
            parsed_answer: None,
            reasoning: String::new(),
            usage: Usage::default(),
            usage_estimated: false,
            query_usages: Vec::new(),
        };
        let req = CompletionRequest {
            model_id: self.model_id.clone(),
            prompt,
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
        };

        let mut last_error = String::new();
        for _ in 0..=self.answer_retries {
            let completion = match self.gateway.complete(&req) {
                Ok(c) => c,
                Err(e) => {
                    entry.query_usages.extend_from_slice(e.billed());
                    entry.usage = entry.query_usages.iter().copied().fold(Usage::default(), |a, b| a + b);
                    let reason = if e.is_context_length() {
                        format!("context length exceeded: {e}")
                    } else {
                        e.to_string()
                    };
                    return Err(StageError::Failed(Box::new(entry), reason));
                }
            };
            entry.query_usages.extend(completion.billed_failures);
            entry.query_usages.push(completion.usage);
            entry.usage = entry.query_usages.iter().copied().fold(Usage::default(), |a, b| a + b);
            entry.usage_estimated |= completion.usage_estimated;
            entry.raw_answer = completion.raw_text;
            match parse_llm_answer(&entry.raw_answer, &req.prompt.class_names) {
                Ok(parsed) => {
                    entry.parsed_answer = Some(parsed.answer);
                    entry.reasoning = parsed.reasoning;
                    return Ok(entry);
                }
                Err(e) => {
                    log::debug!("unparseable answer at stage {stage}: {e}");
                    last_error = e.to_string();
                }
            }
        }
        let attempts = self.answer_retries + 1;
        Err(StageError::Failed(
            Box::new(entry),
            format!("no valid answer after {attempts} attempts: {last_error}"),
        ))
    }

    fn outcome(&self, desc: &Description, strategy: Strategy) -> ClassificationOutcome {
        ClassificationOutcome {
            description_sha256: desc.sha256.clone(),
            strategy,
            model_id: self.model_id.clone(),
            status: Status::Unclassified,
            label: None,
            trace: Vec::new(),
            failure: None,
        }
    }

    fn fail(outcome: &mut ClassificationOutcome, err: StageError) {
        match err {
            StageError::Failed(entry, reason) => {
                outcome.trace.push(*entry);
                outcome.failure = Some(reason);
            }
            StageError::Prompt(reason) => outcome.failure = Some(reason),
        }
    }

    fn finish(outcome: &mut ClassificationOutcome, label: &str) {
        outcome.status = Status::Ok;
        outcome.label = Some(label.to_string());
    }

    pub fn classify(&self, desc: &Description, strategy: Strategy) -> ClassificationOutcome {
        match strategy {
            Strategy::OneQuery => self.classify_one_query(desc),
            Strategy::TopToBottom => self.classify_top_to_bottom(desc),
            Strategy::BottomToTop => self.classify_bottom_to_top(desc),
        }
    }

    pub fn classify_one_query(&self, desc: &Description) -> ClassificationOutcome {
        let mut outcome = self.outcome(desc, Strategy::OneQuery);
        let classes: Vec<&AbuseType> = self.taxonomy.types().iter().collect();
        match self.ask(&desc.text, &classes, None, Stage::Single) {
            Ok(entry) => {
                let label = entry.parsed_answer.clone().expect("parsed");
                outcome.trace.push(entry);
                Self::finish(&mut outcome, &label);
            }
            Err(e) => Self::fail(&mut outcome, e),
        }
        outcome
    }

    pub fn classify_top_to_bottom(&self, desc: &Description) -> ClassificationOutcome {
        let mut outcome = self.outcome(desc, Strategy::TopToBottom);
        let mut current: Option<&AbuseType> = None;
        loop {
            let (classes, synthetic, stage) = match current {
                None => (self.taxonomy.top_level(), None, Stage::L1),
                Some(node) => (
                    self.taxonomy
                        .classes_at(Selector::ChildrenOf(&node.name))
                        .expect("node from taxonomy"),
                    Some(&TTB_OTHER),
                    Stage::for_level(node.level + 1),
                ),
            };
            if classes.is_empty() {
                // A leaf has been reached; current is always set here since
                // a valid taxonomy has at least one level-1 type.
                let node = current.expect("non-empty taxonomy");
                Self::finish(&mut outcome, &node.name);
                return outcome;
            }
            match self.ask(&desc.text, &classes, synthetic, stage) {
                Ok(entry) => {
                    let answer = entry.parsed_answer.clone().expect("parsed");
                    outcome.trace.push(entry);
                    if answer == TTB_OTHER.name {
                        let node = current.expect("ttb_other is never offered at level 1");
                        Self::finish(&mut outcome, &node.name);
                        return outcome;
                    }
                    current = Some(self.taxonomy.get(&answer).expect("answer from class list"));
                }
                Err(e) => {
                    Self::fail(&mut outcome, e);
                    return outcome;
                }
            }
        }
    }

    pub fn classify_bottom_to_top(&self, desc: &Description) -> ClassificationOutcome {
        let mut outcome = self.outcome(desc, Strategy::BottomToTop);
        for level in (1..=self.taxonomy.depth()).rev() {
            let classes = self
                .taxonomy
                .classes_at(Selector::Level(level))
                .expect("level within depth");
            let synthetic = (level > 1).then_some(&BTT_OTHER);
            match self.ask(&desc.text, &classes, synthetic, Stage::for_level(level)) {
                Ok(entry) => {
                    let answer = entry.parsed_answer.clone().expect("parsed");
                    outcome.trace.push(entry);
                    if answer != BTT_OTHER.name {
                        Self::finish(&mut outcome, &answer);
                        return outcome;
                    }
                }
                Err(e) => {
                    Self::fail(&mut outcome, e);
                    return outcome;
                }
            }
        }
        unreachable!("the level-1 query offers no synthetic class")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchConfig {
    /// Number of descriptions classified concurrently.
    pub concurrency: usize,
    pub exec: ExecMode,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            concurrency: 4,
            exec: ExecMode::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchResult {
    /// In input order.
    pub outcomes: Vec<ClassificationOutcome>,
    pub cost: CostReport,
}

/// Classifies every description; failures surface as unclassified outcomes.
/// Fails only when the classifier's model has no price.
pub fn classify_batch(
    descs: &[Description],
    strategy: Strategy,
    classifier: &Classifier<'_>,
    pricing: &PricingTable,
    config: BatchConfig,
) -> Result<BatchResult, CostError> {
    pricing.rates(classifier.model_id())?;
    let run = |d: &Description| classifier.classify(d, strategy);
    let outcomes = run_ordered(descs, config, run);
    let usages: Vec<(String, Usage)> = outcomes.iter().flat_map(|o| o.usage_records()).collect();
    let cost = accumulate_cost(&usages, pricing)?;
    Ok(BatchResult { outcomes, cost })
}

fn run_ordered<F>(descs: &[Description], config: BatchConfig, f: F) -> Vec<ClassificationOutcome>
where
    F: Fn(&Description) -> ClassificationOutcome + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if config.exec.is_parallel() && config.concurrency > 1 && descs.len() > 1 {
        use rayon::prelude::*;
        match rayon::ThreadPoolBuilder::new()
            .num_threads(config.concurrency)
            .build()
        {
            Ok(pool) => return pool.install(|| descs.par_iter().map(&f).collect()),
            Err(e) => log::warn!("cannot build worker pool, running sequentially: {e}"),
        }
    }
    let _ = config;
    descs.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayConfig, MockBackend, RetryPolicy, ScriptedBackend};
    use rust_decimal::Decimal;

    fn gateway(backend: impl crate::gateway::Backend + 'static) -> Gateway {
        Gateway::new(
            backend,
            GatewayConfig {
                max_in_flight: 4,
                retry: RetryPolicy::no_delay(0),
            },
        )
    }

    fn desc() -> Description {
        Description::new("I recorded you through your webcam. Pay 0.1 BTC.")
    }

    fn run(strategy: Strategy, answers: &[&str]) -> (ClassificationOutcome, ScriptedBackend) {
        let t = Taxonomy::shipped();
        let backend = ScriptedBackend::answers(answers);
        let gw = gateway(backend.clone());
        let c = Classifier::new(&t, &gw, "m");
        (c.classify(&desc(), strategy), backend)
    }

    fn labels(o: &ClassificationOutcome) -> (Option<&str>, usize) {
        (o.label.as_deref(), o.trace.len())
    }

    #[test]
    fn one_query_single_stage() {
        let (o, b) = run(Strategy::OneQuery, &["sextortion"]);
        assert_eq!(labels(&o), (Some("sextortion"), 1));
        assert_eq!(b.prompts()[0].class_names.len(), 19);
        assert_eq!(o.trace[0].stage, Stage::Single);
    }

    #[test]
    fn root_answer_is_never_accepted() {
        let (o, b) = run(Strategy::OneQuery, &["⊤", "⊤", "⊤"]);
        assert_eq!(o.status, Status::Unclassified);
        assert_eq!(o.label, None);
        assert_eq!(o.queries(), 3);
        assert_eq!(b.prompts().len(), 3);
        assert!(b.prompts().windows(2).all(|w| w[0] == w[1]));
        assert!(o.failure.unwrap().contains("3 attempts"));
    }

    #[test]
    fn retry_then_success() {
        let t = Taxonomy::shipped();
        let backend = ScriptedBackend::raw([
            "I think it is phishing".to_string(),
            r#"{"answer": "notabuse", "reasoning": "ad"}"#.to_string(),
        ]);
        let gw = gateway(backend);
        let o = Classifier::new(&t, &gw, "m").classify(&desc(), Strategy::TopToBottom);
        assert_eq!(labels(&o), (Some("notabuse"), 1));
        assert_eq!(o.queries(), 2);
        assert_eq!(o.trace[0].query_usages.len(), 2);
    }

    #[test]
    fn top_to_bottom_paths() {
        let (o, _) = run(Strategy::TopToBottom, &["notabuse"]);
        assert_eq!(labels(&o), (Some("notabuse"), 1));
        let (o, _) = run(Strategy::TopToBottom, &["abuse", "ttb_other"]);
        assert_eq!(labels(&o), (Some("abuse"), 2));
        let (o, b) = run(Strategy::TopToBottom, &["abuse", "extortion", "sextortion"]);
        assert_eq!(labels(&o), (Some("sextortion"), 3));
        let l3 = &b.prompts()[2].class_names;
        assert_eq!(l3, &["sextortion", "reputation", "harm", "ddos", "bomb", "ttb_other"]);
        let (o, _) = run(Strategy::TopToBottom, &["abuse", "scam", "ttb_other"]);
        assert_eq!(labels(&o), (Some("scam"), 3));
    }

    #[test]
    fn bottom_to_top_paths() {
        let (o, b) = run(Strategy::BottomToTop, &["investment"]);
        assert_eq!(labels(&o), (Some("investment"), 1));
        assert_eq!(b.prompts()[0].class_names.len(), 14);
        let (o, _) = run(Strategy::BottomToTop, &["btt_other", "scam"]);
        assert_eq!(labels(&o), (Some("scam"), 2));
        let (o, b) = run(Strategy::BottomToTop, &["btt_other", "btt_other", "notabuse"]);
        assert_eq!(labels(&o), (Some("notabuse"), 3));
        assert_eq!(b.prompts()[2].class_names, ["abuse", "notabuse"]);
    }

    #[test]
    fn failure_mid_chain_keeps_trace() {
        let (o, _) = run(Strategy::TopToBottom, &["abuse", "bogus", "bogus", "bogus"]);
        assert_eq!(o.status, Status::Unclassified);
        assert_eq!(o.trace.len(), 2);
        assert_eq!(o.trace[1].parsed_answer, None);
    }

    #[test]
    fn synthetic_class_not_accepted_at_level_one() {
        let (o, _) = run(Strategy::TopToBottom, &["ttb_other", "ttb_other", "ttb_other"]);
        assert_eq!(o.status, Status::Unclassified);
    }

    #[test]
    fn context_length_marks_unclassified_without_querying() {
        let t = Taxonomy::shipped();
        let backend = MockBackend::constant("{}").with_context_limit(10);
        let gw = gateway(backend.clone());
        let o = Classifier::new(&t, &gw, "m").classify(&desc(), Strategy::OneQuery);
        assert_eq!(o.status, Status::Unclassified);
        assert!(o.failure.as_deref().unwrap().starts_with("context length exceeded"));
        assert_eq!(backend.calls(), 0);
        assert_eq!(o.queries(), 0);
    }

    #[test]
    fn batch_preserves_order_and_costs() {
        let t = Taxonomy::shipped();
        let backend = MockBackend::answering(|p| {
            if p.class_names.contains(&"notabuse".to_string()) {
                "abuse".into()
            } else {
                p.class_names[0].clone()
            }
        })
        .with_usage(Usage::new(100, 10));
        let gw = gateway(backend.clone());
        let c = Classifier::new(&t, &gw, "m");
        let descs: Vec<_> = (0..25).map(|i| Description::new(format!("report {i}"))).collect();
        let mut pricing = PricingTable::default();
        pricing.insert("m", Decimal::ONE, Decimal::ONE);
        let r = classify_batch(&descs, Strategy::TopToBottom, &c, &pricing, BatchConfig::default()).unwrap();
        assert_eq!(r.outcomes.len(), 25);
        for (d, o) in descs.iter().zip(&r.outcomes) {
            assert_eq!(d.sha256, o.description_sha256);
            assert_eq!(o.label.as_deref(), Some("sextortion"));
        }
        assert_eq!(r.cost.total.queries, 75);
        assert_eq!(backend.calls(), 75);
        assert_eq!(r.cost.total.prompt_tokens, 7500);
    }

    #[test]
    fn batch_rejects_unpriced_model_before_querying() {
        let t = Taxonomy::shipped();
        let backend = MockBackend::constant("{}");
        let gw = gateway(backend.clone());
        let c = Classifier::new(&t, &gw, "m");
        let r = classify_batch(
            &[desc()],
            Strategy::OneQuery,
            &c,
            &PricingTable::default(),
            BatchConfig::default(),
        );
        assert!(r.is_err());
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn empty_batch() {
        let t = Taxonomy::shipped();
        let gw = gateway(MockBackend::constant("{}"));
        let c = Classifier::new(&t, &gw, "m");
        let mut pricing = PricingTable::default();
        pricing.insert("m", Decimal::ONE, Decimal::ONE);
        let r = classify_batch(&[], Strategy::BottomToTop, &c, &pricing, BatchConfig::default()).unwrap();
        assert!(r.outcomes.is_empty());
        assert_eq!(r.cost.total.usd, Decimal::ZERO);
    }

    #[test]
    fn outcome_json_round_trip() {
        let (o, _) = run(Strategy::TopToBottom, &["abuse", "extortion", "sextortion"]);
        let json = serde_json::to_string(&o).unwrap();
        assert!(json.contains(r#""strategy":"top_to_bottom""#));
        let back: ClassificationOutcome = serde_json::from_str(&json).unwrap();
        assert_eq!(back, o);
    }
}
