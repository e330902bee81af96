use std::collections::HashMap;

use super::{ClusterAssignment, ClusterError};
use crate::ingest::Description;

/// Common English function words, excluded from term tables.
pub const STOP_WORDS: &[&str] = &[
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "your", "yours",
    "yourself", "yourselves", "he", "him", "his", "himself", "she", "her", "hers", "herself",
    "it", "its", "itself", "they", "them", "their", "theirs", "themselves", "what", "which",
    "who", "whom", "this", "that", "these", "those", "am", "is", "are", "was", "were", "be",
    "been", "being", "have", "has", "had", "having", "do", "does", "did", "doing", "a", "an",
    "the", "and", "but", "if", "or", "because", "as", "until", "while", "of", "at", "by",
    "for", "with", "about", "against", "between", "into", "through", "during", "before",
    "after", "above", "below", "to", "from", "up", "down", "in", "out", "on", "off", "over",
    "under", "again", "further", "then", "once", "here", "there", "when", "where", "why",
    "how", "all", "any", "both", "each", "few", "more", "most", "other", "some", "such", "no",
    "nor", "not", "only", "own", "same", "so", "than", "too", "very", "s", "t", "can", "will",
    "just", "don", "should", "now", "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren",
    "couldn", "didn", "doesn", "hadn", "hasn", "haven", "isn", "ma", "mightn", "mustn",
    "needn", "shan", "shouldn", "wasn", "weren", "won", "wouldn",
];

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Most frequent non-stop-word terms across a cluster's descriptions, most
/// frequent first; equal counts keep first-occurrence order.
pub fn cluster_terms(
    assignment: &ClusterAssignment,
    cluster: u32,
    descriptions: &[Description],
    top_n: usize,
) -> Result<Vec<(String, usize)>, ClusterError> {
    let members = assignment.members(cluster)?;
    let by_sha: HashMap<&str, &Description> =
        descriptions.iter().map(|d| (d.sha256.as_str(), d)).collect();
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    let mut seen = 0usize;
    for id in members {
        let Some(desc) = by_sha.get(id) else {
            return Err(ClusterError::InvalidMatrix(format!(
                "no description text for member `{id}`"
            )));
        };
        for tok in tokenize(&desc.text) {
            if STOP_WORDS.contains(&tok.as_str()) {
                continue;
            }
            let entry = counts.entry(tok).or_insert((0, seen));
            entry.0 += 1;
            seen += 1;
        }
    }
    let mut terms: Vec<(String, usize, usize)> =
        counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
    terms.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    Ok(terms.into_iter().take(top_n).map(|(t, c, _)| (t, c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_on_non_alphanumerics() {
        assert_eq!(tokenize("Pay 0.5 BTC, or else!"), ["pay", "0", "5", "btc", "or", "else"]);
        assert!(tokenize("  ... ").is_empty());
    }

    #[test]
    fn ranks_terms() {
        let descs: Vec<Description> = [
            "Your webcam recorded you. Pay bitcoin.",
            "I recorded you with your webcam, pay now",
            "unrelated giveaway text",
        ]
        .iter()
        .map(|t| Description::new(*t))
        .collect();
        let a = ClusterAssignment::new(
            descs.iter().map(|d| d.sha256.clone()).collect(),
            vec![Some(0), Some(0), None],
        );
        let terms = cluster_terms(&a, 0, &descs, 3).unwrap();
        assert_eq!(
            terms,
            vec![("webcam".into(), 2), ("recorded".into(), 2), ("pay".into(), 2)]
        );
        assert!(matches!(cluster_terms(&a, 4, &descs, 3), Err(ClusterError::UnknownCluster(4))));
        assert!(cluster_terms(&a, 0, &descs[2..], 3).is_err());
    }
}
