//! Principal-component embedding of autoencoder latents.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// A fitted principal-component basis.
///
/// Axes are the columns of `axes`, ordered by decreasing explained
/// variance, each flipped so its largest-magnitude component is positive —
/// a fixed sign convention keeps "left/right of the median" statements
/// reproducible across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub mean: DVector<f64>,
    pub axes: DMatrix<f64>,
    /// Explained-variance ratios per axis; non-increasing, summing to 1
    /// (or all zero for constant data).
    pub explained: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Fit a PCA basis: mean-centered covariance eigendecomposition.
pub fn pca_fit(latents: &[DVector<f64>]) -> Result<Embedding> {
    if latents.len() < 2 {
        return Err(CoreError::contract(format!(
            "PCA needs at least 2 samples, got {}",
            latents.len()
        )));
    }
    let d = latents[0].len();
    if d == 0 {
        return Err(CoreError::contract("PCA samples must be non-empty vectors"));
    }
    if latents.iter().any(|x| x.len() != d) {
        return Err(CoreError::contract("PCA samples must share one dimension"));
    }
    let n = latents.len() as f64;
    let mut mean = DVector::zeros(d);
    for x in latents {
        mean += x;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for x in latents {
        let c = x - &mean;
        cov.ger(1.0 / (n - 1.0), &c, &c, 1.0);
    }

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = DMatrix::zeros(d, d);
    let mut variances = Vec::with_capacity(d);
    for (k, &i) in order.iter().enumerate() {
        let mut axis = eig.eigenvectors.column(i).into_owned();
        // Deterministic sign: largest-magnitude component positive.
        let lead = axis
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |acc, (j, v)| {
                if v.abs() > acc.1 {
                    (j, v.abs())
                } else {
                    acc
                }
            });
        if axis[lead.0] < 0.0 {
            axis.neg_mut();
        }
        axes.set_column(k, &axis);
        variances.push(eig.eigenvalues[i].max(0.0));
    }
    let total: f64 = variances.iter().sum();
    let explained = if total > 0.0 {
        variances.iter().map(|v| v / total).collect()
    } else {
        vec![0.0; d]
    };
    Ok(Embedding {
        mean,
        axes,
        explained,
    })
}

/// Project a vector onto the first `k` principal axes.
pub fn pca_project(embedding: &Embedding, x: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
    let d = embedding.dim();
    if k == 0 || k > d {
        return Err(CoreError::contract(format!(
            "projection needs 1 <= k <= {d}, got {k}"
        )));
    }
    if x.len() != d {
        return Err(CoreError::contract(format!(
            "vector dimension {} does not match embedding dimension {d}",
            x.len()
        )));
    }
    let centered = x - &embedding.mean;
    Ok(embedding.axes.columns(0, k).tr_mul(&centered))
}
