//! Dimensionality reduction and density clustering backends.

use hdbscan::{Hdbscan, HdbscanHyperParams};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{ClusterBackend, ReductionBackend};
use crate::error::{Error, Result};
use crate::math::out_of_range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMetric {
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionParams {
    pub n_components: usize,
    pub n_neighbors: usize,
    pub metric: ReductionMetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMetric {
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    pub metric: ClusterMetric,
}

/// Default reduction parameters for a pool of `n_factors`.
pub fn derive_reduction_params(n_factors: usize) -> Result<ReductionParams> {
    if n_factors < 2 {
        return Err(out_of_range("factor count", &n_factors).into());
    }
    Ok(ReductionParams {
        n_components: (n_factors / 5).clamp(10, 50),
        n_neighbors: (n_factors - 1).min(15),
        metric: ReductionMetric::Cosine,
    })
}

/// Default clustering parameters for a pool of `n_factors`.
pub fn derive_cluster_params(n_factors: usize) -> Result<ClusterParams> {
    if n_factors < 2 {
        return Err(out_of_range("factor count", &n_factors).into());
    }
    Ok(ClusterParams {
        min_cluster_size: (n_factors / 20).max(2),
        metric: ClusterMetric::Euclidean,
    })
}

pub trait Reducer: Send + Sync {
    fn reduce(&self, vectors: &[Vec<f64>], params: &ReductionParams) -> Result<Vec<Vec<f64>>>;
}

pub trait Clusterer: Send + Sync {
    /// One label per point; `None` is noise.
    fn cluster(&self, points: &[Vec<f64>], params: &ClusterParams) -> Result<Vec<Option<usize>>>;
}

/// Linear projection onto the leading principal directions.
///
/// Rows are centred, the leading right singular vectors are taken in order of
/// decreasing singular value, and each direction's sign is fixed so that its
/// largest-magnitude coordinate is positive. Components beyond the rank of the
/// data are zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct PcaReducer;

impl Reducer for PcaReducer {
    fn reduce(&self, vectors: &[Vec<f64>], params: &ReductionParams) -> Result<Vec<Vec<f64>>> {
        let n = vectors.len();
        if n < 2 {
            return Err(out_of_range("vector count", &n).into());
        }
        let d = vectors[0].len();
        if vectors.iter().any(|v| v.len() != d) {
            return Err(Error::Backend("vectors of differing width".into()));
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Backend("non-finite embedding coordinate".into()));
        }

        let mut m = DMatrix::from_fn(n, d, |i, j| vectors[i][j]);
        for j in 0..d {
            let mean = m.column(j).mean();
            m.column_mut(j).add_scalar_mut(-mean);
        }
        let svd = m.clone().svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Backend("singular value decomposition failed".into()))?;
        let sv = &svd.singular_values;
        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
        let tol = sv.iter().cloned().fold(0.0, f64::max) * 1e-10;

        let mut out = vec![vec![0.0; params.n_components]; n];
        for (c, &k) in order.iter().take(params.n_components).enumerate() {
            if sv[k] <= tol {
                break;
            }
            let mut dir = v_t.row(k).transpose();
            let pivot = dir.iamax();
            if dir[pivot] < 0.0 {
                dir.neg_mut();
            }
            let coords = &m * dir;
            for (row, x) in out.iter_mut().zip(coords.iter()) {
                row[c] = *x;
            }
        }
        Ok(out)
    }
}

/// HDBSCAN via the `hdbscan` crate, single-cluster results disallowed.
#[derive(Debug, Clone, Copy, Default)]
pub struct HdbscanBackend;

impl Clusterer for HdbscanBackend {
    fn cluster(&self, points: &[Vec<f64>], params: &ClusterParams) -> Result<Vec<Option<usize>>> {
        if points.len() < 2 {
            return Err(out_of_range("point count", &points.len()).into());
        }
        if points.len() <= params.min_cluster_size {
            return Ok(vec![None; points.len()]);
        }
        let hyper = HdbscanHyperParams::builder()
            .min_cluster_size(params.min_cluster_size.max(2))
            .build();
        let labels = Hdbscan::new(points, hyper)
            .cluster()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(labels
            .into_iter()
            .map(|l| usize::try_from(l).ok())
            .collect())
    }
}

pub fn reducer(backend: ReductionBackend) -> Box<dyn Reducer> {
    match backend {
        ReductionBackend::Pca => Box::new(PcaReducer),
    }
}

pub fn clusterer(backend: ClusterBackend) -> Box<dyn Clusterer> {
    match backend {
        ClusterBackend::Hdbscan => Box::new(HdbscanBackend),
    }
}
