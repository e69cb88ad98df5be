//! Statistical models on transport features: PCA, penalized LDA, CCA,
//! nearest-subspace classifiers, and evaluation metrics.
//!
//! All computations run in double precision on [`FeatureMatrix`] inputs.
//! Eigenvector sign ambiguity is pinned everywhere (largest-magnitude
//! coordinate positive for PCA components; positive mean projection of the
//! higher class code for discriminants) so fitted models are deterministic.
//! Each model persists to a directory as a JSON manifest plus `.npy` arrays.

mod cca;
mod metrics;
mod ns;
mod pca;
mod persist;
mod plda;

pub use cca::{cca_fit, CcaModel};
pub use metrics::{auroc, classification_metrics, Metrics};
pub use ns::{local_ns_predict, ns_fit, ns_predict, NsModel};
pub use pca::{pca_fit, pca_fit_with, pca_inverse, pca_lift, pca_transform, PcaMethod, PcaModel};
pub use plda::{calculate_alpha, default_alpha_grid, plda_fit, plda_predict, plda_transform, PldaModel};

use nalgebra::DMatrix;

use crate::embedding::FeatureMatrix;
use crate::{Error, Result};

/// Row-major copy into nalgebra.
fn to_dmatrix(x: &FeatureMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.rows(), x.cols(), x.data())
}

/// Column means of a feature matrix.
fn column_means(x: &FeatureMatrix) -> Vec<f64> {
    let mut means = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (m, v) in means.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    let n = x.rows() as f64;
    for m in &mut means {
        *m /= n;
    }
    means
}

/// Distinct label codes with their row indices, sorted by code ascending.
/// Rejects NaN labels, which would break the code ordering.
fn class_partition(labels: &[f64]) -> Result<Vec<(f64, Vec<usize>)>> {
    if labels.iter().any(|l| l.is_nan()) {
        return Err(Error::InvalidParameter {
            name: "labels",
            reason: "NaN label code".into(),
        });
    }
    let mut classes: Vec<f64> = labels.to_vec();
    classes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    classes.dedup();
    Ok(classes
        .into_iter()
        .map(|code| {
            let idx = labels
                .iter()
                .enumerate()
                .filter(|&(_, l)| *l == code)
                .map(|(i, _)| i)
                .collect();
            (code, idx)
        })
        .collect())
}

/// Angle in radians between two directions, ignoring sign.
pub fn direction_angle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    (dot / (na * nb)).abs().min(1.0).acos()
}

/// Flip `v` in place so its largest-magnitude coordinate is positive; the
/// first such coordinate decides on exact ties.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v {
            *x = -*x;
        }
    }
}
