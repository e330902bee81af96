//! Ground-truth discovery over description embeddings: PCA reduction,
//! HDBSCAN density clustering, per-cluster term tables and propagation of
//! analyst cluster labels to member descriptions.

mod hdbscan;
mod pca;
mod terms;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Taxonomy;

pub use hdbscan::{hdbscan, hdbscan_with, ClusterParams, Metric, Selection};
pub use pca::{pca_reduce, pca_reduce_with, PcaResult};
pub use terms::{cluster_terms, tokenize, STOP_WORDS};

const FILE_MAGIC: &str = "embeddings v1";

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid embedding matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid cluster parameters: {0}")]
    InvalidParams(String),
    #[error("PCA needs at least 2 rows and 1 column, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("variance threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("no variance: all rows are identical")]
    NoVariance,
    #[error("unknown cluster {0}")]
    UnknownCluster(u32),
    #[error("label `{label}` for cluster {cluster} is not a taxonomy type")]
    UnknownLabel { cluster: u32, label: String },
    #[error("embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-per-description embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    values: DMatrix<f64>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, values: DMatrix<f64>) -> Result<Self, ClusterError> {
        if ids.len() != values.nrows() {
            return Err(ClusterError::InvalidMatrix(format!(
                "{} ids for {} rows",
                ids.len(),
                values.nrows()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(ClusterError::InvalidMatrix(format!("duplicate id `{dup}`")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let row = pos % values.nrows().max(1);
            return Err(ClusterError::InvalidMatrix(format!(
                "non-finite value in row {row}"
            )));
        }
        Ok(EmbeddingMatrix { ids, values })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, ClusterError> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(ClusterError::InvalidMatrix("ragged rows".into()));
        }
        let values = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(ids, values)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Reads the text format:
    ///
    /// ```text
    /// embeddings v1 <n> <d>
    /// <id_1>\t<id_2>\t...\t<id_n>
    /// <d whitespace-separated values for id_1>
    /// ...
    /// ```
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, ClusterError> {
        let mut lines = reader.lines();
        let mut next = |what: &str| -> Result<String, ClusterError> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| ClusterError::Format(format!("missing {what}")))
        };
        let header = next("header line")?;
        let rest = header
            .strip_prefix(FILE_MAGIC)
            .ok_or_else(|| ClusterError::Format(format!("expected `{FILE_MAGIC} <n> <d>` header")))?;
        let dims: Vec<usize> = rest
            .split_whitespace()
            .map(|x| x.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| ClusterError::Format(format!("bad dimensions: {e}")))?;
        let [n, d] = dims[..] else {
            return Err(ClusterError::Format("header needs <n> <d>".into()));
        };
        let ids: Vec<String> = if n == 0 {
            Vec::new()
        } else {
            next("id row")?.split('\t').map(str::to_string).collect()
        };
        if ids.len() != n {
            return Err(ClusterError::Format(format!("expected {n} ids, found {}", ids.len())));
        }
        let mut data = Vec::with_capacity(n * d);
        for row in 0..n {
            let line = next(&format!("row {row}"))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|e| ClusterError::Format(format!("row {row}: {e}")))?,
                );
            }
            if data.len() - before != d {
                return Err(ClusterError::Format(format!(
                    "row {row} has {} values, expected {d}",
                    data.len() - before
                )));
            }
        }
        Self::new(ids, DMatrix::from_row_slice(n, d, &data))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClusterError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ClusterError> {
        writeln!(w, "{FILE_MAGIC} {} {}", self.nrows(), self.ncols())?;
        if self.nrows() > 0 {
            writeln!(w, "{}", self.ids.join("\t"))?;
        }
        for row in self.values.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Cluster membership per id; noise points are singletons (`None`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    ids: Vec<String>,
    labels: Vec<Option<u32>>,
    sizes: BTreeMap<u32, usize>,
}

/// One line of the assignments output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub sha256: String,
    pub cluster_id: Option<u32>,
}

impl ClusterAssignment {
    pub fn new(ids: Vec<String>, labels: Vec<Option<u32>>) -> Self {
        assert_eq!(ids.len(), labels.len());
        let mut sizes = BTreeMap::new();
        for l in labels.iter().flatten() {
            *sizes.entry(*l).or_insert(0) += 1;
        }
        ClusterAssignment { ids, labels, sizes }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Labels aligned with [`ids`](Self::ids).
    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    pub fn get(&self, id: &str) -> Option<Option<u32>> {
        self.ids.iter().position(|x| x == id).map(|i| self.labels[i])
    }

    pub fn sizes(&self) -> &BTreeMap<u32, usize> {
        &self.sizes
    }

    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn singletons(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Member ids of a cluster in input order.
    pub fn members(&self, cluster: u32) -> Result<Vec<&str>, ClusterError> {
        if !self.sizes.contains_key(&cluster) {
            return Err(ClusterError::UnknownCluster(cluster));
        }
        Ok(self
            .ids
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == Some(cluster))
            .map(|(id, _)| id.as_str())
            .collect())
    }

    pub fn records(&self) -> Vec<AssignmentRecord> {
        self.ids
            .iter()
            .zip(&self.labels)
            .map(|(id, l)| AssignmentRecord {
                sha256: id.clone(),
                cluster_id: *l,
            })
            .collect()
    }

    pub fn from_records(records: Vec<AssignmentRecord>) -> Self {
        let (ids, labels) = records.into_iter().map(|r| (r.sha256, r.cluster_id)).unzip();
        Self::new(ids, labels)
    }
}

/// Gives every member of each labeled cluster that cluster's label.
/// Singletons and unlabeled clusters do not appear in the result.
pub fn propagate_cluster_labels(
    assignment: &ClusterAssignment,
    labeled_clusters: &BTreeMap<u32, String>,
    taxonomy: &Taxonomy,
) -> Result<BTreeMap<String, String>, ClusterError> {
    let mut out = BTreeMap::new();
    for (&cluster, label) in labeled_clusters {
        if !taxonomy.contains(label) {
            return Err(ClusterError::UnknownLabel {
                cluster,
                label: label.clone(),
            });
        }
        for id in assignment.members(cluster)? {
            out.insert(id.to_string(), label.clone());
        }
    }
    Ok(out)
}
