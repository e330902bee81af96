use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{ClusterError, EmbeddingMatrix};
use crate::exec::{map_indices, ExecMode};

/// Rows per partial covariance block. Fixed so both execution modes sum the
/// same partials in the same order and produce identical bits.
const COV_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// Row `i` is the projection of input row `i`.
    pub reduced: DMatrix<f64>,
    /// Retained component loadings, one column per component.
    pub components: DMatrix<f64>,
    /// Column means subtracted before projection.
    pub mean: DVector<f64>,
    /// Eigenvalues of all components, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_ratio: f64,
}

impl PcaResult {
    pub fn k(&self) -> usize {
        self.components.ncols()
    }
}

/// Projects onto the fewest principal components whose cumulative explained
/// variance reaches `threshold` of the total.
pub fn pca_reduce(matrix: &EmbeddingMatrix, threshold: f64) -> Result<PcaResult, ClusterError> {
    pca_reduce_with(matrix.values(), threshold, ExecMode::default())
}

pub fn pca_reduce_with(
    x: &DMatrix<f64>,
    threshold: f64,
    mode: ExecMode,
) -> Result<PcaResult, ClusterError> {
    let (n, d) = x.shape();
    if n < 2 || d < 1 {
        return Err(ClusterError::TooSmall { rows: n, cols: d });
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(ClusterError::BadThreshold(threshold));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::InvalidMatrix("non-finite value".into()));
    }

    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = covariance(&centered, mode);

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(ClusterError::NoVariance);
    }

    let target = threshold * total - 1e-10 * total;
    let mut cum = 0.0;
    let mut k = d;
    for (i, ev) in eigenvalues.iter().enumerate() {
        cum += ev;
        if cum >= target {
            k = i + 1;
            break;
        }
    }

    let mut components = DMatrix::zeros(d, k);
    for (c, &src) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        let mut pivot = 0;
        for j in 1..d {
            if v[j].abs() > v[pivot].abs() {
                pivot = j;
            }
        }
        if v[pivot] < 0.0 {
            v = -v;
        }
        components.set_column(c, &v);
    }

    let reduced = &centered * &components;
    let retained: f64 = eigenvalues[..k].iter().sum();
    Ok(PcaResult {
        reduced,
        components,
        mean,
        eigenvalues,
        explained_ratio: retained / total,
    })
}

fn covariance(centered: &DMatrix<f64>, mode: ExecMode) -> DMatrix<f64> {
    let (n, d) = centered.shape();
    let chunks = n.div_ceil(COV_CHUNK);
    let partials = map_indices(mode, chunks, |c| {
        let start = c * COV_CHUNK;
        let rows = centered.rows(start, COV_CHUNK.min(n - start));
        rows.transpose() * rows
    });
    let mut cov = DMatrix::zeros(d, d);
    for p in partials {
        cov += p;
    }
    cov / (n as f64 - 1.0)
}
