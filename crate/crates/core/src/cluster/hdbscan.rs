use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ClusterAssignment, ClusterError, EmbeddingMatrix};
use crate::exec::{map_indices, ExecMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Excess of mass.
    #[default]
    Eom,
    Leaf,
}

impl std::str::FromStr for Selection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eom" => Ok(Selection::Eom),
            "leaf" => Ok(Selection::Leaf),
            other => Err(format!("unknown cluster selection `{other}` (expected eom or leaf)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Neighborhood size for core distances; the point itself counts.
    pub min_samples: usize,
    pub min_cluster_size: usize,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub metric: Metric,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            min_samples: 2,
            min_cluster_size: 5,
            selection: Selection::Eom,
            metric: Metric::Euclidean,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.min_samples < 1 {
            return Err(ClusterError::InvalidParams("min_samples must be at least 1".into()));
        }
        if self.min_cluster_size < 2 {
            return Err(ClusterError::InvalidParams(
                "min_cluster_size must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Clusters the rows of `matrix`. Output does not depend on row order.
pub fn hdbscan(matrix: &EmbeddingMatrix, params: &ClusterParams) -> Result<ClusterAssignment, ClusterError> {
    hdbscan_with(matrix.ids(), matrix.values(), params, ExecMode::default())
}

pub fn hdbscan_with(
    ids: &[String],
    points: &DMatrix<f64>,
    params: &ClusterParams,
    mode: ExecMode,
) -> Result<ClusterAssignment, ClusterError> {
    params.validate()?;
    let n = points.nrows();
    if ids.len() != n {
        return Err(ClusterError::InvalidMatrix(format!("{} ids for {n} rows", ids.len())));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::InvalidMatrix("non-finite value".into()));
    }
    if n == 0 {
        return Ok(ClusterAssignment::empty());
    }
    if params.min_samples > n {
        return Err(ClusterError::InvalidParams(format!(
            "min_samples {} exceeds the {n} points",
            params.min_samples
        )));
    }

    // Work in id order so the result is independent of input order.
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let rows: Vec<Vec<f64>> = perm
        .iter()
        .map(|&i| points.row(i).iter().copied().collect())
        .collect();

    let core = core_distances(&rows, params.min_samples, mode);
    let mst = prim_mst(&rows, &core, mode);
    let dendrogram = Dendrogram::from_mst(n, mst);
    let condensed = condense(&dendrogram, params.min_cluster_size);
    let selected = match params.selection {
        Selection::Eom => select_eom(&condensed),
        Selection::Leaf => select_leaves(&condensed),
    };
    let canonical = label_points(&condensed, &selected, n);

    let mut labels = vec![None; n];
    for (c, &orig) in perm.iter().enumerate() {
        labels[orig] = canonical[c];
    }
    Ok(ClusterAssignment::new(ids.to_vec(), labels))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn core_distances(rows: &[Vec<f64>], min_samples: usize, mode: ExecMode) -> Vec<f64> {
    let n = rows.len();
    map_indices(mode, n, |i| {
        let mut d: Vec<f64> = rows.iter().map(|r| euclidean(&rows[i], r)).collect();
        let k = min_samples - 1;
        let (_, kth, _) = d.select_nth_unstable_by(k, f64::total_cmp);
        *kth
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Edge {
    pub w: f64,
    pub a: usize,
    pub b: usize,
}

impl Edge {
    fn new(w: f64, x: usize, y: usize) -> Self {
        Edge {
            w,
            a: x.min(y),
            b: x.max(y),
        }
    }

    /// Strict total order; makes the minimum spanning tree unique.
    fn key_cmp(&self, other: &Edge) -> Ordering {
        self.w
            .total_cmp(&other.w)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

const PRIM_CHUNK: usize = 256;

/// Dense Prim over mutual reachability distances.
pub(crate) fn prim_mst(rows: &[Vec<f64>], core: &[f64], mode: ExecMode) -> Vec<Edge> {
    let n = rows.len();
    let mut in_tree = vec![false; n];
    let mut best: Vec<Option<Edge>> = vec![None; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    let chunks = n.div_ceil(PRIM_CHUNK);
    for _ in 1..n {
        let updated: Vec<(Vec<Option<Edge>>, Option<Edge>)> = map_indices(mode, chunks, |c| {
            let start = c * PRIM_CHUNK;
            let end = (start + PRIM_CHUNK).min(n);
            let mut local = best[start..end].to_vec();
            let mut chunk_min: Option<Edge> = None;
            for j in start..end {
                if in_tree[j] {
                    continue;
                }
                let d = euclidean(&rows[current], &rows[j]);
                let cand = Edge::new(d.max(core[current]).max(core[j]), current, j);
                let slot = &mut local[j - start];
                if slot.is_none_or(|e| cand.key_cmp(&e) == Ordering::Less) {
                    *slot = Some(cand);
                }
                let e = slot.expect("just set");
                if chunk_min.is_none_or(|m| e.key_cmp(&m) == Ordering::Less) {
                    chunk_min = Some(e);
                }
            }
            (local, chunk_min)
        });
        let mut next: Option<Edge> = None;
        for (c, (local, chunk_min)) in updated.into_iter().enumerate() {
            let start = c * PRIM_CHUNK;
            best[start..start + local.len()].copy_from_slice(&local);
            if let Some(m) = chunk_min {
                if next.is_none_or(|x| m.key_cmp(&x) == Ordering::Less) {
                    next = Some(m);
                }
            }
        }
        let e = next.expect("graph is complete");
        let v = if in_tree[e.a] { e.b } else { e.a };
        in_tree[v] = true;
        edges.push(e);
        current = v;
    }
    edges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Single-linkage hierarchy where all merges at one distance form a single
/// node, so no node has a child at its own distance.
pub(crate) struct Dendrogram {
    pub points: usize,
    /// Nodes `0..points` are points; later nodes are merges.
    pub children: Vec<Vec<usize>>,
    pub distance: Vec<f64>,
    pub size: Vec<usize>,
}

impl Dendrogram {
    pub(crate) fn from_mst(n: usize, mut edges: Vec<Edge>) -> Self {
        edges.sort_by(Edge::key_cmp);
        let mut d = Dendrogram {
            points: n,
            children: vec![Vec::new(); n],
            distance: vec![0.0; n],
            size: vec![1; n],
        };
        // Current dendrogram node of each point-level component root.
        let mut node_of: Vec<usize> = (0..n).collect();
        let mut points_uf = UnionFind::new(n);
        let mut i = 0;
        while i < edges.len() {
            let w = edges[i].w;
            let mut j = i;
            while j < edges.len() && edges[j].w == w {
                j += 1;
            }
            let group = &edges[i..j];
            // Components touched by this group, keyed by their root before merging.
            let mut before: BTreeMap<usize, usize> = BTreeMap::new();
            for e in group {
                for p in [e.a, e.b] {
                    let r = points_uf.find(p);
                    before.entry(r).or_insert(node_of[r]);
                }
            }
            for e in group {
                points_uf.union(e.a, e.b);
            }
            let mut merged: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (&old_root, &node) in &before {
                merged.entry(points_uf.find(old_root)).or_default().push(node);
            }
            for (root, kids) in merged {
                let id = d.children.len();
                d.size.push(kids.iter().map(|&k| d.size[k]).sum());
                d.children.push(kids);
                d.distance.push(w);
                node_of[root] = id;
            }
            i = j;
        }
        d
    }

    pub(crate) fn root(&self) -> usize {
        self.children.len() - 1
    }

    fn leaves(&self, node: usize, out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if self.children[x].is_empty() {
                out.push(x);
            } else {
                stack.extend(self.children[x].iter().copied());
            }
        }
    }
}

fn lambda(distance: f64) -> f64 {
    if distance > 0.0 {
        1.0 / distance
    } else {
        f64::INFINITY
    }
}

/// `a - b` that is zero for equal values, including two infinities.
fn span(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        a - b
    }
}

pub(crate) struct Condensed {
    pub parent: Vec<Option<usize>>,
    pub birth: Vec<f64>,
    pub child_clusters: Vec<Vec<usize>>,
    pub stability: Vec<f64>,
    /// Cluster each point last belonged to before falling out.
    pub point_cluster: Vec<usize>,
}

pub(crate) fn condense(d: &Dendrogram, min_cluster_size: usize) -> Condensed {
    let n = d.points;
    let mut c = Condensed {
        parent: vec![None],
        birth: vec![0.0],
        child_clusters: vec![Vec::new()],
        stability: vec![0.0],
        point_cluster: vec![0; n],
    };
    if n == 1 {
        return c;
    }
    // (dendrogram node, condensed cluster it belongs to)
    let mut stack = vec![(d.root(), 0usize)];
    while let Some((node, cluster)) = stack.pop() {
        let lam = lambda(d.distance[node]);
        let birth = c.birth[cluster];
        let kids = &d.children[node];
        let big: Vec<usize> = kids
            .iter()
            .copied()
            .filter(|&k| d.size[k] >= min_cluster_size)
            .collect();
        let mut fall = Vec::new();
        for &k in kids {
            if big.contains(&k) {
                continue;
            }
            d.leaves(k, &mut fall);
        }
        for p in fall {
            c.point_cluster[p] = cluster;
            c.stability[cluster] += span(lam, birth);
        }
        match big.len() {
            0 => {}
            1 => stack.push((big[0], cluster)),
            _ => {
                for k in big {
                    let id = c.parent.len();
                    c.parent.push(Some(cluster));
                    c.birth.push(lam);
                    c.child_clusters.push(Vec::new());
                    c.stability.push(0.0);
                    c.child_clusters[cluster].push(id);
                    c.stability[cluster] += span(lam, birth) * d.size[k] as f64;
                    stack.push((k, id));
                }
            }
        }
    }
    c
}

fn descendants(c: &Condensed, root: usize, out: &mut Vec<usize>) {
    let mut stack = c.child_clusters[root].clone();
    while let Some(x) = stack.pop() {
        out.push(x);
        stack.extend(c.child_clusters[x].iter().copied());
    }
}

pub(crate) fn select_eom(c: &Condensed) -> Vec<bool> {
    let k = c.parent.len();
    let mut selected = vec![false; k];
    let mut subtree = c.stability.clone();
    // Children always have larger ids than their parent.
    for id in (1..k).rev() {
        if c.child_clusters[id].is_empty() {
            selected[id] = true;
            continue;
        }
        let child_sum: f64 = c.child_clusters[id].iter().map(|&x| subtree[x]).sum();
        if child_sum <= c.stability[id] {
            selected[id] = true;
            let mut below = Vec::new();
            descendants(c, id, &mut below);
            for x in below {
                selected[x] = false;
            }
        } else {
            subtree[id] = child_sum;
        }
    }
    selected
}

pub(crate) fn select_leaves(c: &Condensed) -> Vec<bool> {
    (0..c.parent.len())
        .map(|id| id != 0 && c.child_clusters[id].is_empty())
        .collect()
}

/// Labels in canonical point order, clusters numbered by smallest member.
pub(crate) fn label_points(c: &Condensed, selected: &[bool], n: usize) -> Vec<Option<u32>> {
    let mut raw: Vec<Option<usize>> = vec![None; n];
    for (p, slot) in raw.iter_mut().enumerate() {
        let mut x = Some(c.point_cluster[p]);
        while let Some(id) = x {
            if selected[id] {
                *slot = Some(id);
                break;
            }
            x = c.parent[id];
        }
    }
    let mut renumber: BTreeMap<usize, u32> = BTreeMap::new();
    let mut next = 0u32;
    raw.iter()
        .map(|r| {
            r.map(|id| {
                *renumber.entry(id).or_insert_with(|| {
                    next += 1;
                    next - 1
                })
            })
        })
        .collect()
}
