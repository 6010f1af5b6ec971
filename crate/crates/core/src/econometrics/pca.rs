use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Principal axes retained to reach a target share of total variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Retained components, row-major `n_components x dim`, orthonormal rows.
    pub components: Vec<f64>,
    /// Explained-variance ratio of every component, descending.
    pub explained_variance_ratio: Vec<f64>,
    pub n_components: usize,
    pub dim: usize,
}

impl PcaModel {
    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    pub fn retained_ratio(&self) -> f64 {
        self.explained_variance_ratio[..self.n_components].iter().sum()
    }

    /// Centres `x` and projects it on the retained components.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: alloc::format!("{} columns", self.dim),
                found: alloc::format!("{}", x.ncols()),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), self.n_components, |i, c| {
            let comp = self.component(c);
            (0..self.dim).map(|j| (x[(i, j)] - self.mean[j]) * comp[j]).sum()
        }))
    }
}

/// Eigen-decomposes the sample covariance of `x` and keeps the smallest
/// number of leading components whose explained variance reaches
/// `variance_target`. Returns the model and the centred projection.
///
/// Component signs are fixed so that each component's largest-magnitude
/// entry is positive.
pub fn pca_reduce(x: &DMatrix<f64>, variance_target: f64) -> Result<(PcaModel, DMatrix<f64>)> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(invalid("variance_target", "must lie in (0, 1]"));
    }
    let (n, dim) = x.shape();
    if n < 2 || dim == 0 {
        return Err(Error::InsufficientData(alloc::format!(
            "pca needs at least 2 rows and 1 column, got {n}x{dim}"
        )));
    }
    let mean: Vec<f64> = (0..dim).map(|j| x.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let max_diag = cov.diagonal().amax().max(f64::MIN_POSITIVE);
    let eig = cov.symmetric_eigen();

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let scale = values.first().copied().unwrap_or(0.0);
    if !(total > 0.0) || scale <= 1e-14 * max_diag {
        return Err(Error::ZeroVariance("pca input has rank 0".into()));
    }
    let ratios: Vec<f64> = values.iter().map(|v| v / total).collect();

    let mut k = 0;
    let mut cum = 0.0;
    while k < dim {
        cum += ratios[k];
        k += 1;
        if cum >= variance_target - 1e-12 {
            break;
        }
    }

    let mut components = Vec::with_capacity(k * dim);
    for &idx in order.iter().take(k) {
        let v = eig.eigenvectors.column(idx);
        let mut pivot = 0;
        for j in 1..dim {
            if libm::fabs(v[j]) > libm::fabs(v[pivot]) + 1e-12 {
                pivot = j;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        let norm = v.norm();
        components.extend(v.iter().map(|c| sign * c / norm));
    }

    let model = PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios,
        n_components: k,
        dim,
    };
    let reduced = model.transform(x)?;
    Ok((model, reduced))
}
