//! Report ingestion: JSON Lines parsing for both report sources,
//! description deduplication by content hash, and description statistics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::util::{lower_median, sha256_hex, word_count};

/// Maximum length of the free-text "other" abuse category.
pub const MAX_OTHER_ABUSE_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Bitcoinabuse,
    Bbb,
}

impl Source {
    fn id_field(self) -> &'static str {
        match self {
            Source::Bitcoinabuse => "report_id",
            Source::Bbb => "scam_id",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Bitcoinabuse => "bitcoinabuse",
            Source::Bbb => "bbb",
        })
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bitcoinabuse" | "ba" => Ok(Source::Bitcoinabuse),
            "bbb" => Ok(Source::Bbb),
            other => Err(format!("unknown report source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorKind {
    Url,
    Phone,
    Email,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Indicator {
    pub kind: IndicatorKind,
    pub value: String,
}

/// A single submitted abuse report in the unified model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub source: Source,
    pub report_id: String,
    pub created: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ba_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other_abuse: Option<String>,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dollars_lost: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicators: Option<Vec<Indicator>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

impl Report {
    pub fn description_sha256(&self) -> String {
        sha256_hex(self.description.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReportRef {
    pub source: Source,
    pub report_id: String,
}

/// A distinct description text and the reports that carried it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub sha256: String,
    pub text: String,
    pub word_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    pub report_ids: Vec<ReportRef>,
}

impl Description {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        Description {
            sha256: sha256_hex(text.as_bytes()),
            word_count: word_count(&text),
            text,
            language: None,
            report_ids: Vec::new(),
        }
    }
}

/// A record that could not be turned into a [`Report`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub source: Source,
    /// 1-based line number in the input file.
    pub line: usize,
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedReports {
    pub reports: Vec<Report>,
    pub rejects: Vec<Reject>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch at line {line}: expected a {expected} record with field `{field}`")]
    SchemaMismatch {
        line: usize,
        expected: Source,
        field: &'static str,
    },
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!(
            "expected string or number, got {other}"
        ))),
    }
}

#[derive(Deserialize)]
struct BitcoinAbuseRecord {
    #[serde(deserialize_with = "string_or_number")]
    report_id: String,
    created: String,
    #[serde(default)]
    address: Option<String>,
    #[serde(default)]
    abuse_type: Option<String>,
    #[serde(default)]
    abuse_type_other: Option<String>,
    description: String,
    #[serde(default)]
    language: Option<String>,
}

#[derive(Deserialize)]
struct BbbRecord {
    #[serde(deserialize_with = "string_or_number")]
    scam_id: String,
    created: String,
    description: String,
    #[serde(default)]
    dollars_lost: Option<Decimal>,
    #[serde(default)]
    location: Option<String>,
    #[serde(default)]
    address: Option<String>,
    #[serde(default)]
    indicators: Option<Vec<Indicator>>,
    #[serde(default)]
    language: Option<String>,
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.filter(|x| !x.trim().is_empty())
}

/// Accepts `YYYY-MM-DD` optionally followed by a time part.
fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() < 10 {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    let shape = digits(0..4) && b[4] == b'-' && digits(5..7) && b[7] == b'-' && digits(8..10);
    if !shape || (b.len() > 10 && b[10] != b'T' && b[10] != b' ') {
        return false;
    }
    let month: u32 = s[5..7].parse().unwrap_or(0);
    let day: u32 = s[8..10].parse().unwrap_or(0);
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

fn record_to_report(value: Value, source: Source) -> Result<Report, String> {
    let report = match source {
        Source::Bitcoinabuse => {
            let r: BitcoinAbuseRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
            Report {
                source,
                report_id: r.report_id,
                created: r.created,
                address: non_empty(r.address),
                ba_type: non_empty(r.abuse_type),
                other_abuse: non_empty(r.abuse_type_other),
                description: r.description,
                dollars_lost: None,
                location: None,
                indicators: None,
                language: non_empty(r.language),
            }
        }
        Source::Bbb => {
            let r: BbbRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
            Report {
                source,
                report_id: r.scam_id,
                created: r.created,
                address: non_empty(r.address),
                ba_type: None,
                other_abuse: None,
                description: r.description,
                dollars_lost: r.dollars_lost,
                location: non_empty(r.location),
                indicators: r.indicators,
                language: non_empty(r.language),
            }
        }
    };
    if report.description.trim().is_empty() {
        return Err("empty description".into());
    }
    if source == Source::Bitcoinabuse && report.address.is_none() {
        return Err("missing address".into());
    }
    if !is_iso_date(&report.created) {
        return Err(format!("invalid created date `{}`", report.created));
    }
    if report.dollars_lost.is_some_and(|d| d.is_sign_negative() && !d.is_zero()) {
        return Err("negative dollars_lost".into());
    }
    if report
        .other_abuse
        .as_ref()
        .is_some_and(|o| o.chars().count() > MAX_OTHER_ABUSE_CHARS)
    {
        return Err(format!(
            "other_abuse longer than {MAX_OTHER_ABUSE_CHARS} characters"
        ));
    }
    Ok(report)
}

/// Parses JSON Lines records of one source. Malformed records go to
/// `rejects`; a first record that does not carry the source's id field
/// fails the whole input as a schema mismatch.
pub fn parse_reports_from<R: BufRead>(
    reader: R,
    source: Source,
) -> Result<ParsedReports, IngestError> {
    let mut out = ParsedReports::default();
    let mut schema_checked = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: "<reader>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let reject = |reason: String| Reject {
            source,
            line: line_no,
            reason,
            raw: line.clone(),
        };
        let value: Value = match serde_json::from_str(&line) {
            Ok(v @ Value::Object(_)) => v,
            Ok(_) => {
                out.rejects.push(reject("record is not a JSON object".into()));
                continue;
            }
            Err(e) => {
                out.rejects.push(reject(format!("invalid JSON: {e}")));
                continue;
            }
        };
        if !schema_checked {
            schema_checked = true;
            if value.get(source.id_field()).is_none() {
                return Err(IngestError::SchemaMismatch {
                    line: line_no,
                    expected: source,
                    field: source.id_field(),
                });
            }
        }
        match record_to_report(value, source) {
            Ok(r) => out.reports.push(r),
            Err(reason) => out.rejects.push(reject(reason)),
        }
    }
    Ok(out)
}

pub fn parse_reports(path: impl AsRef<Path>, source: Source) -> Result<ParsedReports, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_reports_from(std::io::BufReader::new(file), source).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// One [`Description`] per distinct description byte string, in first-seen
/// order. The hash is taken over the raw bytes with no normalization.
pub fn dedup_descriptions(reports: &[Report]) -> Vec<Description> {
    let mut by_hash: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<Description> = Vec::new();
    for r in reports {
        let digest = r.description_sha256();
        let idx = *by_hash.entry(digest.clone()).or_insert_with(|| {
            out.push(Description {
                sha256: digest,
                text: r.description.clone(),
                word_count: word_count(&r.description),
                language: None,
                report_ids: Vec::new(),
            });
            out.len() - 1
        });
        let d = &mut out[idx];
        if d.language.is_none() {
            d.language = r.language.clone();
        }
        d.report_ids.push(ReportRef {
            source: r.source,
            report_id: r.report_id.clone(),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionStats {
    pub count: usize,
    pub min_words: Option<usize>,
    /// Lower median for even counts.
    pub median_words: Option<usize>,
    pub mean_words: Option<f64>,
    pub max_words: Option<usize>,
    /// Language tag → count; descriptions without a tag count as `unknown`.
    pub languages: BTreeMap<String, usize>,
}

pub fn description_stats(descs: &[Description]) -> DescriptionStats {
    let mut counts: Vec<usize> = descs.iter().map(|d| d.word_count).collect();
    counts.sort_unstable();
    let mut languages = BTreeMap::new();
    for d in descs {
        let tag = d.language.clone().unwrap_or_else(|| "unknown".into());
        *languages.entry(tag).or_insert(0) += 1;
    }
    let total: usize = counts.iter().sum();
    DescriptionStats {
        count: descs.len(),
        min_words: counts.first().copied(),
        median_words: lower_median(&counts),
        mean_words: (!counts.is_empty()).then(|| total as f64 / counts.len() as f64),
        max_words: counts.last().copied(),
        languages,
    }
}
