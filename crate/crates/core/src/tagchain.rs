//! Address tagging by majority vote, deposit-based revenue estimation and
//! reported-loss statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::ClassificationOutcome;
use crate::ingest::Report;
use crate::taxonomy::{Taxonomy, NOT_ABUSE, ROOT};
use crate::util::{group_thousands, lower_median, render_columns};

pub const SATOSHI_PER_BTC: u64 = 100_000_000;

#[derive(Debug, Error)]
pub enum TagError {
    #[error("{path}:{line}: {message}")]
    Deposit {
        path: String,
        line: usize,
        message: String,
    },
    #[error("tags file: {0}")]
    Tags(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressTag {
    pub address: String,
    pub abuse_type: String,
    /// Label counts, `notabuse` excluded.
    pub votes: BTreeMap<String, u64>,
    pub total_reports_considered: u64,
    pub source: String,
}

/// Winning label among `labels`, ignoring `notabuse`. Ties go to the deeper
/// taxonomy level, then to the lexicographically smaller name.
pub fn vote<'a, I>(labels: I, taxonomy: &Taxonomy) -> Option<(String, BTreeMap<String, u64>)>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut votes: BTreeMap<String, u64> = BTreeMap::new();
    for l in labels {
        if l != NOT_ABUSE && l != ROOT {
            *votes.entry(l.to_string()).or_insert(0) += 1;
        }
    }
    let level = |name: &str| taxonomy.get(name).map_or(0, |t| t.level);
    let winner = votes
        .iter()
        .max_by(|(a, ca), (b, cb)| {
            ca.cmp(cb)
                .then(level(a).cmp(&level(b)))
                .then(b.cmp(a))
        })?
        .0
        .clone();
    Some((winner, votes))
}

/// Tag for one address from the outcomes of its reports; unclassified
/// outcomes are skipped.
pub fn majority_vote_tag(
    address: &str,
    outcomes: &[&ClassificationOutcome],
    taxonomy: &Taxonomy,
    source: &str,
) -> Option<AddressTag> {
    let labels: Vec<&str> = outcomes.iter().filter_map(|o| o.label.as_deref()).collect();
    let (abuse_type, votes) = vote(labels.iter().copied(), taxonomy)?;
    Some(AddressTag {
        address: address.to_string(),
        abuse_type,
        votes,
        total_reports_considered: labels.len() as u64,
        source: source.to_string(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tagging {
    /// Address ascending.
    pub tags: Vec<AddressTag>,
    /// Addresses whose reports were all `notabuse` or unclassified.
    pub untagged: Vec<String>,
}

/// Every report with an address votes with its description's label.
pub fn tag_addresses(
    reports: &[Report],
    outcomes: &[ClassificationOutcome],
    taxonomy: &Taxonomy,
    source: &str,
) -> Tagging {
    let by_sha: HashMap<&str, &ClassificationOutcome> = outcomes
        .iter()
        .map(|o| (o.description_sha256.as_str(), o))
        .collect();
    let mut per_address: BTreeMap<&str, Vec<&ClassificationOutcome>> = BTreeMap::new();
    for r in reports {
        let Some(addr) = r.address.as_deref() else {
            continue;
        };
        let entry = per_address.entry(addr).or_default();
        if let Some(o) = by_sha.get(r.description_sha256().as_str()) {
            if o.is_ok() {
                entry.push(o);
            }
        }
    }
    let mut out = Tagging::default();
    for (addr, outs) in per_address {
        match majority_vote_tag(addr, &outs, taxonomy, source) {
            Some(t) => out.tags.push(t),
            None => out.untagged.push(addr.to_string()),
        }
    }
    out
}

/// Compatible when equal or when one lies on the other's ancestor chain.
pub fn tags_compatible(taxonomy: &Taxonomy, a: &str, b: &str) -> bool {
    a == b
        || taxonomy.is_ancestor(a, b).unwrap_or(false)
        || taxonomy.is_ancestor(b, a).unwrap_or(false)
}

fn votes_cell(votes: &BTreeMap<String, u64>) -> String {
    votes
        .iter()
        .map(|(l, c)| format!("{l}:{c}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn tags_to_csv(tags: &[AddressTag]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["address", "abuse_type", "votes", "total_reports", "source"])
        .expect("in-memory write");
    for t in tags {
        w.write_record([
            t.address.as_str(),
            &t.abuse_type,
            &votes_cell(&t.votes),
            &t.total_reports_considered.to_string(),
            &t.source,
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn tags_from_csv<R: std::io::Read>(reader: R) -> Result<Vec<AddressTag>, TagError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut tags = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| TagError::Tags(e.to_string()))?;
        let bad = |m: &str| TagError::Tags(format!("row {}: {m}", i + 1));
        if rec.len() != 5 {
            return Err(bad("expected 5 columns"));
        }
        let mut votes = BTreeMap::new();
        for part in rec[2].split(';').filter(|p| !p.is_empty()) {
            let (l, c) = part.rsplit_once(':').ok_or_else(|| bad("malformed votes"))?;
            votes.insert(l.to_string(), c.parse().map_err(|_| bad("malformed vote count"))?);
        }
        tags.push(AddressTag {
            address: rec[0].to_string(),
            abuse_type: rec[1].to_string(),
            votes,
            total_reports_considered: rec[3].parse().map_err(|_| bad("bad total_reports"))?,
            source: rec[4].to_string(),
        });
    }
    Ok(tags)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositRecord {
    pub address: String,
    pub tx_id: String,
    /// Satoshi.
    pub amount: u64,
    pub date: String,
    /// USD per BTC on the deposit date.
    pub usd_rate: Decimal,
    #[serde(default)]
    pub sender_cluster: Option<u64>,
    #[serde(default)]
    pub recipient_cluster: Option<u64>,
}

impl DepositRecord {
    pub fn usd(&self) -> Decimal {
        Decimal::from(self.amount) * self.usd_rate / Decimal::from(SATOSHI_PER_BTC)
    }
}

pub fn load_deposits(path: impl AsRef<Path>) -> Result<Vec<DepositRecord>, TagError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| TagError::Deposit {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let d: DepositRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if d.amount == 0 {
            return Err(err("amount must be positive".into()));
        }
        if d.usd_rate.is_sign_negative() && !d.usd_rate.is_zero() {
            return Err(err("usd_rate must not be negative".into()));
        }
        out.push(d);
    }
    Ok(out)
}

/// Drops deposits whose sender and recipient share a known cluster.
pub fn filter_self_deposits(deposits: &[DepositRecord]) -> Vec<DepositRecord> {
    deposits
        .iter()
        .filter(|d| !matches!((d.sender_cluster, d.recipient_cluster), (Some(s), Some(r)) if s == r))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevenueRow {
    pub address_count: u64,
    pub satoshi: u128,
    /// Full precision.
    pub usd: Decimal,
}

impl RevenueRow {
    fn add(&mut self, d: &DepositRecord) {
        self.satoshi += u128::from(d.amount);
        self.usd += d.usd();
    }

    pub fn btc_string(&self) -> String {
        let whole = self.satoshi / u128::from(SATOSHI_PER_BTC);
        let frac = self.satoshi % u128::from(SATOSHI_PER_BTC);
        format!("{whole}.{frac:08}")
    }

    pub fn usd_rounded(&self) -> Decimal {
        self.usd.round_dp_with_strategy(0, RoundingStrategy::MidpointAwayFromZero)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevenueReport {
    /// Tagged types in taxonomy order.
    pub rows: Vec<(String, RevenueRow)>,
    /// Deposits to addresses without a tag.
    pub remainder: RevenueRow,
    /// Deposits to explicitly excluded addresses.
    pub excluded: RevenueRow,
    pub total: RevenueRow,
}

/// Sums deposits per tagged abuse type. Expects self-deposits already removed.
pub fn revenue_by_type(
    tags: &[AddressTag],
    deposits: &[DepositRecord],
    exclusions: &[String],
    taxonomy: &Taxonomy,
) -> RevenueReport {
    let excluded: BTreeSet<&str> = exclusions.iter().map(String::as_str).collect();
    let tag_of: HashMap<&str, &str> = tags
        .iter()
        .map(|t| (t.address.as_str(), t.abuse_type.as_str()))
        .collect();
    let mut rows: BTreeMap<&str, RevenueRow> = tags.iter().map(|t| (t.abuse_type.as_str(), RevenueRow::default())).collect();
    let mut funded: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut report = RevenueReport::default();
    let mut remainder_addrs = BTreeSet::new();
    let mut excluded_addrs = BTreeSet::new();
    for d in deposits {
        if excluded.contains(d.address.as_str()) {
            report.excluded.add(d);
            excluded_addrs.insert(d.address.as_str());
        } else if let Some(t) = tag_of.get(d.address.as_str()) {
            rows.get_mut(t).expect("row per tag").add(d);
            funded.entry(t).or_default().insert(d.address.as_str());
        } else {
            report.remainder.add(d);
            remainder_addrs.insert(d.address.as_str());
        }
    }
    report.remainder.address_count = remainder_addrs.len() as u64;
    report.excluded.address_count = excluded_addrs.len() as u64;
    for (t, row) in rows.iter_mut() {
        row.address_count = funded.get(t).map_or(0, |s| s.len() as u64);
    }
    let mut ordered: Vec<(String, RevenueRow)> = rows.into_iter().map(|(t, r)| (t.to_string(), r)).collect();
    ordered.sort_by_key(|(t, _)| (taxonomy.position(t).unwrap_or(usize::MAX), t.clone()));
    for (_, r) in &ordered {
        report.total.address_count += r.address_count;
        report.total.satoshi += r.satoshi;
        report.total.usd += r.usd;
    }
    report.rows = ordered;
    report
}

fn usd_whole(d: Decimal) -> String {
    format!(
        "${}",
        group_thousands(&d.round_dp_with_strategy(0, RoundingStrategy::MidpointAwayFromZero).to_string())
    )
}

impl RevenueReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("abuse_type,addresses,btc,usd\n");
        let mut line = |name: &str, r: &RevenueRow| {
            s.push_str(&format!("{name},{},{},{}\n", r.address_count, r.btc_string(), r.usd_rounded()));
        };
        for (t, r) in &self.rows {
            line(t, r);
        }
        line("total", &self.total);
        line("untagged", &self.remainder);
        line("excluded", &self.excluded);
        s
    }

    pub fn render_table(&self) -> String {
        let mut rows = vec![["Type".to_string(), "Addr.".into(), "BTC".into(), "USD".into()]];
        let fmt = |name: &str, r: &RevenueRow| {
            [
                name.to_string(),
                group_thousands(&r.address_count.to_string()),
                group_thousands(&r.btc_string()),
                usd_whole(r.usd),
            ]
        };
        rows.extend(self.rows.iter().map(|(t, r)| fmt(t, r)));
        rows.push(fmt("total", &self.total));
        rows.push(fmt("untagged", &self.remainder));
        rows.push(fmt("excluded", &self.excluded));
        render_columns(&rows, &[false, true, true, true])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossRow {
    pub reports_all: u64,
    pub reports_with_loss: u64,
    pub total_usd: Decimal,
    /// `total_usd / reports_with_loss`, zero when no report has a loss.
    pub mean_usd: Decimal,
    /// Lower median over all reports of the type, missing losses as zero.
    pub median_usd: Decimal,
}

/// Per-type loss statistics; types in taxonomy order.
pub fn loss_stats_by_type(
    reports: &[Report],
    outcomes: &[ClassificationOutcome],
    taxonomy: &Taxonomy,
) -> Vec<(String, LossRow)> {
    let label_of: HashMap<&str, &str> = outcomes
        .iter()
        .filter_map(|o| o.label.as_deref().map(|l| (o.description_sha256.as_str(), l)))
        .collect();
    let mut losses: BTreeMap<&str, Vec<Decimal>> = BTreeMap::new();
    for r in reports {
        if let Some(l) = label_of.get(r.description_sha256().as_str()) {
            losses
                .entry(l)
                .or_default()
                .push(r.dollars_lost.unwrap_or(Decimal::ZERO).max(Decimal::ZERO));
        }
    }
    let mut out: Vec<(String, LossRow)> = losses
        .into_iter()
        .map(|(t, mut v)| {
            v.sort();
            let with_loss = v.iter().filter(|x| **x > Decimal::ZERO).count() as u64;
            let total: Decimal = v.iter().sum();
            let row = LossRow {
                reports_all: v.len() as u64,
                reports_with_loss: with_loss,
                total_usd: total,
                mean_usd: if with_loss == 0 { Decimal::ZERO } else { total / Decimal::from(with_loss) },
                median_usd: lower_median(&v).unwrap_or(Decimal::ZERO),
            };
            (t.to_string(), row)
        })
        .collect();
    out.sort_by_key(|(t, _)| (taxonomy.position(t).unwrap_or(usize::MAX), t.clone()));
    out
}

pub fn loss_stats_to_csv(rows: &[(String, LossRow)]) -> String {
    let mut s = String::from("abuse_type,reports_all,reports_with_loss,total_usd,mean_usd,median_usd\n");
    for (t, r) in rows {
        s.push_str(&format!(
            "{t},{},{},{},{:.2},{}\n",
            r.reports_all,
            r.reports_with_loss,
            r.total_usd.normalize(),
            r.mean_usd.round_dp_with_strategy(2, RoundingStrategy::MidpointAwayFromZero),
            r.median_usd.normalize()
        ));
    }
    s
}

pub fn render_loss_table(rows: &[(String, LossRow)]) -> String {
    let mut table = vec![[
        "Type".to_string(),
        "Reports".into(),
        "With loss".into(),
        "Total".into(),
        "Avg.".into(),
        "Med.".into(),
    ]];
    for (t, r) in rows {
        table.push([
            t.clone(),
            group_thousands(&r.reports_all.to_string()),
            group_thousands(&r.reports_with_loss.to_string()),
            usd_whole(r.total_usd),
            usd_whole(r.mean_usd),
            usd_whole(r.median_usd),
        ]);
    }
    render_columns(&table, &[false, true, true, true, true, true])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{Status, Strategy};
    use crate::ingest::{Description, Source};
    use crate::taxonomy::TaxonomyEntry;
    use std::str::FromStr;

    fn dec(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    fn toy() -> Taxonomy {
        let e = |name: &str, parent: &str| TaxonomyEntry {
            name: name.into(),
            parent: parent.into(),
            definition: format!("{name} def"),
            level: None,
        };
        Taxonomy::from_entries(vec![
            e("abuse", "ROOT"),
            e("notabuse", "ROOT"),
            e("scam", "abuse"),
            e("giveaway", "scam"),
            e("investment", "scam"),
        ])
        .unwrap()
    }

    fn outcome(text: &str, label: Option<&str>) -> ClassificationOutcome {
        ClassificationOutcome {
            description_sha256: Description::new(text).sha256,
            strategy: Strategy::TopToBottom,
            model_id: "m".into(),
            status: if label.is_some() { Status::Ok } else { Status::Unclassified },
            label: label.map(str::to_string),
            trace: vec![],
            failure: None,
        }
    }

    fn report(id: &str, text: &str, address: Option<&str>, lost: Option<&str>) -> Report {
        Report {
            source: Source::Bbb,
            report_id: id.into(),
            created: "2022-01-01".into(),
            address: address.map(str::to_string),
            ba_type: None,
            other_abuse: None,
            description: text.into(),
            dollars_lost: lost.map(dec),
            location: None,
            indicators: None,
            language: None,
        }
    }

    #[test]
    fn vote_examples() {
        let t = toy();
        let (w, v) = vote(["scam", "scam", "notabuse"], &t).unwrap();
        assert_eq!(w, "scam");
        assert_eq!(v, BTreeMap::from([("scam".into(), 2)]));
        assert!(vote(["notabuse", "notabuse"], &t).is_none());
        assert!(vote([], &t).is_none());
        assert_eq!(vote(["scam", "giveaway"], &t).unwrap().0, "giveaway");
        assert_eq!(vote(["investment", "giveaway"], &t).unwrap().0, "giveaway");
    }

    fn brute_force(labels: &[&str], t: &Taxonomy) -> Option<String> {
        let names: Vec<&str> = t.types().iter().map(|x| x.name.as_str()).filter(|n| *n != NOT_ABUSE).collect();
        let count = |n: &str| labels.iter().filter(|l| **l == n).count();
        // A candidate wins if it beats every other candidate pairwise.
        names
            .iter()
            .filter(|n| count(n) > 0)
            .find(|&&n| {
                names.iter().filter(|&&m| m != n && count(m) > 0).all(|&m| {
                    let (cn, cm) = (count(n), count(m));
                    let (ln, lm) = (t.get(n).unwrap().level, t.get(m).unwrap().level);
                    cn > cm || cn == cm && (ln > lm || ln == lm && n < m)
                })
            })
            .map(|n| n.to_string())
    }

    #[test]
    fn vote_matches_brute_force_on_all_small_multisets() {
        let t = toy();
        let names: Vec<&str> = t.types().iter().map(|x| x.name.as_str()).collect();
        let mut checked = 0;
        for size in 0..=4u32 {
            for code in 0..names.len().pow(size) {
                let mut c = code;
                let labels: Vec<&str> = (0..size)
                    .map(|_| {
                        let l = names[c % names.len()];
                        c /= names.len();
                        l
                    })
                    .collect();
                let got = vote(labels.iter().copied(), &t).map(|x| x.0);
                assert_eq!(got, brute_force(&labels, &t), "{labels:?}");
                let mut rev = labels.clone();
                rev.reverse();
                assert_eq!(vote(rev.iter().copied(), &t).map(|x| x.0), got);
                checked += 1;
            }
        }
        assert_eq!(checked, 1 + 5 + 25 + 125 + 625);
    }

    #[test]
    fn tagging_propagates_by_description() {
        let t = toy();
        let reports = vec![
            report("1", "free coins", Some("addrB"), None),
            report("2", "free coins", Some("addrA"), None),
            report("3", "hello", Some("addrC"), None),
            report("4", "free coins", None, None),
            report("5", "broken", Some("addrD"), None),
        ];
        let outcomes = vec![outcome("free coins", Some("giveaway")), outcome("hello", Some("notabuse")), outcome("broken", None)];
        let tagging = tag_addresses(&reports, &outcomes, &t, "fixture");
        assert_eq!(tagging.tags.len(), 2);
        assert_eq!(tagging.tags[0].address, "addrA");
        assert_eq!(tagging.tags[1].abuse_type, "giveaway");
        assert_eq!(tagging.untagged, ["addrC", "addrD"]);
    }

    #[test]
    fn tags_csv_round_trip() {
        let tags = vec![AddressTag {
            address: "bc1q,x".into(),
            abuse_type: "scam".into(),
            votes: BTreeMap::from([("scam".into(), 2), ("giveaway".into(), 1)]),
            total_reports_considered: 4,
            source: "top_to_bottom/gpt".into(),
        }];
        let csv = tags_to_csv(&tags);
        assert!(csv.contains("giveaway:1;scam:2"));
        assert_eq!(tags_from_csv(csv.as_bytes()).unwrap(), tags);
    }

    #[test]
    fn compatibility() {
        let t = toy();
        assert!(tags_compatible(&t, "scam", "giveaway"));
        assert!(tags_compatible(&t, "giveaway", "abuse"));
        assert!(tags_compatible(&t, "scam", "scam"));
        assert!(!tags_compatible(&t, "giveaway", "investment"));
        assert!(!tags_compatible(&t, "notabuse", "scam"));
    }

    fn deposit(address: &str, sat: u64, rate: &str, s: Option<u64>, r: Option<u64>) -> DepositRecord {
        DepositRecord {
            address: address.into(),
            tx_id: format!("tx-{address}-{sat}"),
            amount: sat,
            date: "2021-05-01".into(),
            usd_rate: dec(rate),
            sender_cluster: s,
            recipient_cluster: r,
        }
    }

    #[test]
    fn self_deposit_filter() {
        let ds = vec![
            deposit("a", 1, "1", Some(42), Some(42)),
            deposit("b", 2, "1", Some(1), Some(2)),
            deposit("c", 3, "1", None, Some(2)),
        ];
        let kept = filter_self_deposits(&ds);
        assert_eq!(kept, ds[1..].to_vec());
        assert_eq!(filter_self_deposits(&kept), kept);
    }

    fn tag(address: &str, t: &str) -> AddressTag {
        AddressTag {
            address: address.into(),
            abuse_type: t.into(),
            votes: BTreeMap::from([(t.to_string(), 1)]),
            total_reports_considered: 1,
            source: "x".into(),
        }
    }

    #[test]
    fn revenue_arithmetic() {
        let t = Taxonomy::shipped();
        let tags = vec![tag("h1", "harm"), tag("h2", "harm"), tag("i1", "investment")];
        let ds = vec![
            deposit("h1", SATOSHI_PER_BTC, "10000", None, None),
            deposit("h2", SATOSHI_PER_BTC / 2, "20000", None, None),
            deposit("zz", 7, "1", None, None),
            deposit("ex", 5 * SATOSHI_PER_BTC, "1", None, None),
        ];
        let r = revenue_by_type(&tags, &ds, &["ex".to_string()], &t);
        assert_eq!(r.rows[0].0, "harm");
        let harm = r.rows[0].1;
        assert_eq!(harm.address_count, 2);
        assert_eq!(harm.btc_string(), "1.50000000");
        assert_eq!(harm.usd_rounded(), dec("20000"));
        assert_eq!(r.rows[1].1, RevenueRow::default());
        assert_eq!(r.remainder.satoshi, 7);
        assert_eq!(r.excluded.satoshi, 5 * u128::from(SATOSHI_PER_BTC));
        assert!(r.render_table().contains("$20,000"));
    }

    #[test]
    fn revenue_without_deposits_is_zero() {
        let r = revenue_by_type(&[tag("a", "scam")], &[], &[], &Taxonomy::shipped());
        assert_eq!(r.rows, vec![("scam".to_string(), RevenueRow::default())]);
        assert_eq!(r.total, RevenueRow::default());
    }

    #[test]
    fn revenue_formatting() {
        let row = RevenueRow {
            address_count: 196,
            satoshi: 1_060_176_548_108,
            usd: dec("251082115.6"),
        };
        let report = RevenueReport {
            rows: vec![("investment".into(), row)],
            ..Default::default()
        };
        let table = report.render_table();
        let line = table.lines().find(|l| l.starts_with("investment")).unwrap();
        let cells: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cells, ["investment", "196", "10,601.76548108", "$251,082,116"]);
    }

    #[test]
    fn loss_stats() {
        let t = Taxonomy::shipped();
        let reports = vec![
            report("1", "a", None, Some("0")),
            report("2", "a", None, None),
            report("3", "a", None, Some("300")),
            report("4", "a", None, Some("500")),
            report("5", "b", None, Some("100")),
        ];
        let outcomes = vec![outcome("a", Some("investment")), outcome("b", Some("scam"))];
        let stats = loss_stats_by_type(&reports, &outcomes, &t);
        assert_eq!(stats[0].0, "scam");
        let scam = &stats[0].1;
        assert_eq!((scam.reports_all, scam.reports_with_loss), (1, 1));
        assert_eq!((scam.total_usd, scam.mean_usd, scam.median_usd), (dec("100"), dec("100"), dec("100")));
        let inv = &stats[1].1;
        assert_eq!((inv.reports_all, inv.reports_with_loss), (4, 2));
        assert_eq!(inv.total_usd, dec("800"));
        assert_eq!(inv.mean_usd, dec("400"));
        assert_eq!(inv.median_usd, Decimal::ZERO);
        assert!(render_loss_table(&stats).contains("$400"));
        assert!(loss_stats_to_csv(&stats).contains("investment,4,2,800,400.00,0"));
    }

    #[test]
    fn deposit_loading_validates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, "{\"address\":\"a\",\"tx_id\":\"t\",\"amount\":5,\"date\":\"2021-01-01\",\"usd_rate\":\"30000.5\",\"sender_cluster\":1}\n\n").unwrap();
        let ds = load_deposits(&p).unwrap();
        assert_eq!(ds[0].recipient_cluster, None);
        std::fs::write(&p, "{\"address\":\"a\",\"tx_id\":\"t\",\"amount\":0,\"date\":\"d\",\"usd_rate\":1}\n").unwrap();
        assert!(load_deposits(&p).is_err());
        std::fs::write(&p, "{\"address\":\"a\",\"tx_id\":\"t\",\"amount\":1,\"date\":\"d\",\"usd_rate\":-1}\n").unwrap();
        assert!(load_deposits(&p).is_err());
    }
}
