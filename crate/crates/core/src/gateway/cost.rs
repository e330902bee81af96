//! Pricing and cost accounting.
//!
//! USD amounts are exact decimals; rounding to cents (half-up) happens only
//! when a report is rendered.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Usage;
use crate::util::group_thousands;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRates {
    pub usd_per_1m_input_tokens: Decimal,
    pub usd_per_1m_output_tokens: Decimal,
}

/// Per-model token prices, loaded from a JSON object `{model: rates}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PricingTable {
    pub models: BTreeMap<String, ModelRates>,
}

#[derive(Debug, Error)]
pub enum CostError {
    #[error("no pricing for model `{0}`")]
    Unpriced(String),
    #[error("negative rate for model `{0}`")]
    NegativeRate(String),
    #[error("cannot read pricing file {path}: {message}")]
    Load { path: String, message: String },
}

impl PricingTable {
    pub fn from_json(json: &str) -> Result<Self, CostError> {
        let table: PricingTable = serde_json::from_str(json).map_err(|e| CostError::Load {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        table.check()?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CostError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CostError::Load {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| match e {
            CostError::Load { message, .. } => CostError::Load {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    fn check(&self) -> Result<(), CostError> {
        for (model, r) in &self.models {
            if r.usd_per_1m_input_tokens.is_sign_negative() && !r.usd_per_1m_input_tokens.is_zero()
                || r.usd_per_1m_output_tokens.is_sign_negative()
                    && !r.usd_per_1m_output_tokens.is_zero()
            {
                return Err(CostError::NegativeRate(model.clone()));
            }
        }
        Ok(())
    }

    pub fn insert(&mut self, model: impl Into<String>, input: Decimal, output: Decimal) {
        self.models.insert(
            model.into(),
            ModelRates {
                usd_per_1m_input_tokens: input,
                usd_per_1m_output_tokens: output,
            },
        );
    }

    pub fn rates(&self, model: &str) -> Result<&ModelRates, CostError> {
        self.models
            .get(model)
            .ok_or_else(|| CostError::Unpriced(model.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub queries: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Full precision.
    pub usd: Decimal,
}

impl CostRow {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    /// USD rounded half-up to cents.
    pub fn usd_cents(&self) -> Decimal {
        self.usd
            .round_dp_with_strategy(2, RoundingStrategy::MidpointAwayFromZero)
    }

    fn add(&mut self, other: &CostRow) {
        self.queries += other.queries;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.usd += other.usd;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub models: BTreeMap<String, CostRow>,
    pub total: CostRow,
}

/// Aggregates per-query usage into per-model and total cost rows.
pub fn accumulate_cost(
    usages: &[(String, Usage)],
    pricing: &PricingTable,
) -> Result<CostReport, CostError> {
    let mut grouped: BTreeMap<String, CostRow> = BTreeMap::new();
    for (model, usage) in usages {
        pricing.rates(model)?;
        let row = grouped.entry(model.clone()).or_default();
        row.queries += 1;
        row.prompt_tokens += usage.prompt_tokens;
        row.completion_tokens += usage.completion_tokens;
    }
    let million = Decimal::from(1_000_000u32);
    let mut report = CostReport::default();
    for (model, mut row) in grouped {
        let r = pricing.rates(&model)?;
        row.usd = (Decimal::from(row.prompt_tokens) * r.usd_per_1m_input_tokens
            + Decimal::from(row.completion_tokens) * r.usd_per_1m_output_tokens)
            / million;
        report.total.add(&row);
        report.models.insert(model, row);
    }
    Ok(report)
}

impl CostReport {
    /// Field-wise sum of two reports.
    pub fn merge(&self, other: &CostReport) -> CostReport {
        let mut out = self.clone();
        for (model, row) in &other.models {
            out.models.entry(model.clone()).or_default().add(row);
        }
        out.total.add(&other.total);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,queries,prompt_tokens,completion_tokens,tokens,usd,usd_exact\n");
        let mut line = |name: &str, r: &CostRow| {
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{:.2},{}",
                r.queries,
                r.prompt_tokens,
                r.completion_tokens,
                r.tokens(),
                r.usd_cents(),
                r.usd.normalize()
            );
        };
        for (m, r) in &self.models {
            line(m, r);
        }
        line("total", &self.total);
        s
    }

    pub fn render_table(&self) -> String {
        let mut rows: Vec<[String; 4]> = vec![[
            "Model".into(),
            "Queries".into(),
            "Tokens".into(),
            "USD".into(),
        ]];
        let fmt = |name: &str, r: &CostRow| {
            [
                name.to_string(),
                group_thousands(&r.queries.to_string()),
                group_thousands(&r.tokens().to_string()),
                format!("${}", group_thousands(&format!("{:.2}", r.usd_cents()))),
            ]
        };
        rows.extend(self.models.iter().map(|(m, r)| fmt(m, r)));
        rows.push(fmt("total", &self.total));
        crate::util::render_columns(&rows, &[false, true, true, true])
    }
}
