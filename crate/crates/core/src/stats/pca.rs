//! Principal component analysis with the Gram-matrix path for wide data.

use nalgebra::SymmetricEigen;

use super::{column_means, fix_sign, to_dmatrix};
use crate::embedding::FeatureMatrix;
use crate::{Error, Result};

/// Which covariance-like matrix to decompose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaMethod {
    /// `D x D` covariance eigendecomposition.
    Direct,
    /// `N x N` Gram matrix eigendecomposition with eigenvectors lifted to
    /// feature space; equivalent to [`PcaMethod::Direct`] but cheap when
    /// `D >> N`.
    Gram,
    /// Gram when `D > N`, direct otherwise.
    Auto,
}

/// Fitted PCA basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Column means of the training matrix, length `D`.
    pub mean: Vec<f64>,
    /// Orthonormal components, `k` rows of length `D`, row-major.
    pub basis: Vec<f64>,
    pub k: usize,
    pub d: usize,
    /// Sample variances along the retained components, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Total sample variance of the centered training data.
    pub total_variance: f64,
    pub variance_threshold: f64,
}

impl PcaModel {
    pub fn component(&self, i: usize) -> &[f64] {
        &self.basis[i * self.d..(i + 1) * self.d]
    }

    /// Fraction of total variance captured by each retained component.
    pub fn explained_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    /// Cumulative explained-variance fraction at the retained `k`.
    pub fn cumulative_ratio(&self) -> f64 {
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }
}

/// Fit PCA, retaining the minimal number of components whose cumulative
/// explained variance reaches `variance_threshold`.
pub fn pca_fit(x: &FeatureMatrix, variance_threshold: f64) -> Result<PcaModel> {
    pca_fit_with(x, variance_threshold, PcaMethod::Auto)
}

/// [`pca_fit`] with the decomposition path pinned; the two paths agree to
/// floating-point accuracy, which the test suite exploits.
pub fn pca_fit_with(
    x: &FeatureMatrix,
    variance_threshold: f64,
    method: PcaMethod,
) -> Result<PcaModel> {
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "variance_threshold",
            reason: format!("{variance_threshold} is outside (0, 1]"),
        });
    }
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::DegenerateData {
            context: "pca_fit",
            reason: format!("need at least 2 samples, got {n}"),
        });
    }
    let mean = column_means(x);
    let mut xc = to_dmatrix(x);
    for mut row in xc.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let use_gram = match method {
        PcaMethod::Gram => true,
        PcaMethod::Direct => false,
        PcaMethod::Auto => d > n,
    };
    // Eigenvalues of the scatter matrix (descending) and feature-space
    // eigenvectors as matrix columns.
    let (scatter_eigs, vectors) = if use_gram {
        let gram = &xc * xc.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = descending(&eig.eigenvalues.as_slice().to_vec());
        let mut eigs = Vec::new();
        let mut cols = Vec::new();
        for &i in &order {
            let g = eig.eigenvalues[i];
            if g <= 0.0 {
                continue;
            }
            // Lift u (length N) to feature space: v = X_c^T u / sqrt(g).
            let u = eig.eigenvectors.column(i);
            let v = xc.transpose() * u / g.sqrt();
            eigs.push(g);
            cols.push(v);
        }
        (eigs, cols)
    } else {
        let cov = xc.transpose() * &xc;
        let eig = SymmetricEigen::new(cov);
        let order = descending(&eig.eigenvalues.as_slice().to_vec());
        let mut eigs = Vec::new();
        let mut cols = Vec::new();
        for &i in &order {
            let g = eig.eigenvalues[i];
            if g <= 0.0 {
                continue;
            }
            eigs.push(g);
            cols.push(eig.eigenvectors.column(i).into_owned());
        }
        (eigs, cols)
    };
    let total_scatter: f64 = scatter_eigs.iter().sum();
    if total_scatter <= 0.0 || !total_scatter.is_finite() {
        return Err(Error::DegenerateData {
            context: "pca_fit",
            reason: "total variance is zero".into(),
        });
    }
    // Trim numerically-zero tail directions so threshold 1.0 gives the rank.
    let rank_tol = scatter_eigs[0] * 1e-12;
    let rank = scatter_eigs.iter().take_while(|&&g| g > rank_tol).count();
    let mut k = rank;
    let mut cum = 0.0;
    for (i, &g) in scatter_eigs.iter().take(rank).enumerate() {
        cum += g;
        if cum / total_scatter >= variance_threshold {
            k = i + 1;
            break;
        }
    }
    let denom = (n - 1) as f64;
    let mut basis = Vec::with_capacity(k * d);
    for col in vectors.iter().take(k) {
        let norm = col.norm();
        let mut row: Vec<f64> = col.iter().map(|v| v / norm).collect();
        fix_sign(&mut row);
        basis.extend_from_slice(&row);
    }
    Ok(PcaModel {
        mean,
        basis,
        k,
        d,
        explained_variance: scatter_eigs.iter().take(k).map(|g| g / denom).collect(),
        total_variance: total_scatter / denom,
        variance_threshold,
    })
}

fn descending(eigs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..eigs.len()).collect();
    order.sort_by(|&a, &b| eigs[b].partial_cmp(&eigs[a]).unwrap());
    order
}

/// Project rows onto the basis: `(X - mean) B^T`, an `N x k` matrix.
pub fn pca_transform(model: &PcaModel, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    if x.cols() != model.d {
        return Err(Error::DimMismatch {
            context: "pca_transform",
            expected: model.d,
            got: x.cols(),
        });
    }
    let mut data = Vec::with_capacity(x.rows() * model.k);
    for i in 0..x.rows() {
        let row = x.row(i);
        for c in 0..model.k {
            let comp = model.component(c);
            let mut s = 0.0;
            for j in 0..model.d {
                s += (row[j] - model.mean[j]) * comp[j];
            }
            data.push(s);
        }
    }
    FeatureMatrix::new(x.rows(), model.k, data)
}

/// Map scores back to feature space: `Z B + mean`, an `n x D` matrix.
pub fn pca_inverse(model: &PcaModel, z: &FeatureMatrix) -> Result<FeatureMatrix> {
    if z.cols() != model.k {
        return Err(Error::DimMismatch {
            context: "pca_inverse",
            expected: model.k,
            got: z.cols(),
        });
    }
    let mut data = Vec::with_capacity(z.rows() * model.d);
    for i in 0..z.rows() {
        let scores = z.row(i);
        let mut row = model.mean.clone();
        for (c, &s) in scores.iter().enumerate() {
            let comp = model.component(c);
            for j in 0..model.d {
                row[j] += s * comp[j];
            }
        }
        data.extend_from_slice(&row);
    }
    FeatureMatrix::new(z.rows(), model.d, data)
}

/// Reconstruct a single feature row from the first `k` scores.
pub fn pca_lift(model: &PcaModel, scores: &[f64]) -> Result<Vec<f64>> {
    let z = FeatureMatrix::new(1, scores.len(), scores.to_vec())?;
    Ok(pca_inverse(model, &z)?.data().to_vec())
}
