//! Principal component analysis.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue threshold below which a direction counts as null.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// `k` unit vectors of length `d`.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// `n` rows of `k` coordinates.
    pub projections: Vec<Vec<f64>>,
}

/// Top-`k` principal axes of the rows of `data` (`n × d`, row-major).
///
/// The eigenproblem is solved on whichever of the `d × d` scatter matrix or the
/// `n × n` Gram matrix is smaller. Each component is signed so that its
/// largest-magnitude entry is positive.
pub fn pca(data: &[f64], n: usize, d: usize, k: usize) -> Result<PcaResult> {
    if n < 2 || d == 0 {
        return Err(Error::TooFewSamples(n));
    }
    if data.len() != n * d {
        return Err(Error::LengthMismatch(data.len(), n * d));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::DegenerateRank {
            requested: k,
            rank: n.min(d),
        });
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| data[i * d + j] - mean[j]);

    let (values, vectors) = if d <= n {
        let eig = SymmetricEigen::new(x.transpose() * &x);
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let eig = SymmetricEigen::new(&x * x.transpose());
        (eig.eigenvalues, eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let top = values[order[0]].max(0.0);
    let rank = order
        .iter()
        .take_while(|&&i| values[i] > RANK_TOLERANCE * top && top > 0.0)
        .count();
    if k > rank {
        return Err(Error::DegenerateRank { requested: k, rank });
    }

    let mut components = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let lambda = values[i];
        let mut v: Vec<f64> = if d <= n {
            vectors.column(i).iter().copied().collect()
        } else {
            // v = Xᵀu / |Xᵀu| maps a Gram eigenvector to a scatter eigenvector
            let u = vectors.column(i);
            let raw = x.transpose() * u;
            let norm = raw.norm();
            raw.iter().map(|c| c / norm).collect()
        };
        let lead = v.iter().fold(0.0f64, |m, c| if c.abs() > m.abs() { *c } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        components.push(v);
        ratios.push(lambda / total);
    }
    let projections = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| c.iter().enumerate().map(|(j, cj)| x[(i, j)] * cj).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        mean,
        components,
        explained_variance_ratio: ratios,
        projections,
    })
}

impl PcaResult {
    /// Coordinates of a new row on the fitted axes.
    pub fn project(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::DimMismatch {
                expected: self.mean.len(),
                found: row.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(row.iter().zip(&self.mean))
                    .map(|(cj, (x, m))| cj * (x - m))
                    .sum()
            })
            .collect())
    }
}
