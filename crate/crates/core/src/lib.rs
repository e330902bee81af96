//! Classification of cryptocurrency abuse reports into a hierarchical abuse
//! taxonomy using chained LLM queries, plus the surrounding machinery:
//! report ingestion and deduplication, ground-truth discovery by density
//! clustering, evaluation, address tagging and revenue/loss aggregation.
//!
//! The `parallel` feature (on by default) runs the data-parallel loops on
//! rayon; without it every [`exec::ExecMode`] falls back to sequential code.

pub mod classify;
pub mod cluster;
pub mod evaluate;
pub mod exec;
pub mod gateway;
pub mod ingest;
pub mod pipeline;
pub mod prompt;
pub mod tagchain;
pub mod taxonomy;
mod util;

pub use classify::{ClassificationOutcome, Classifier, Status, Strategy};
pub use gateway::{Gateway, PricingTable, Usage};
pub use ingest::{Description, Report, Source};
pub use taxonomy::{AbuseType, Taxonomy};
