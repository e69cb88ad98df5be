//! Nearest-subspace classification, global and local.

use nalgebra::DMatrix;

use super::class_partition;
use crate::embedding::FeatureMatrix;
use crate::{Error, Result};

/// Per-class affine subspaces fitted to the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct NsModel {
    /// Class codes, ascending.
    pub classes: Vec<f64>,
    /// Class means, one length-`d` vector per class.
    pub means: Vec<Vec<f64>>,
    /// Orthonormal class bases, `r_c` rows of length `d` each (row-major);
    /// rank 0 leaves an empty basis, reducing the class to its mean.
    pub bases: Vec<Vec<f64>>,
    pub ranks: Vec<usize>,
    pub dim: usize,
    pub rank_threshold: f64,
}

/// Mean and orthonormal row basis of `rows`, truncated at the cumulative
/// squared-singular-value fraction `rank_threshold`.
fn subspace(rows: &[&[f64]], dim: usize, rank_threshold: f64) -> (Vec<f64>, Vec<f64>, usize) {
    let n = rows.len();
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(*row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = DMatrix::zeros(n, dim);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..dim {
            centered[(i, j)] = row[j] - mean[j];
        }
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("thin SVD with right vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    let energies: Vec<f64> = order
        .iter()
        .map(|&i| svd.singular_values[i].powi(2))
        .collect();
    let total: f64 = energies.iter().sum();
    let mut rank = 0;
    if total > 0.0 {
        let tol = energies[0] * 1e-24;
        let mut cum = 0.0;
        for &e in &energies {
            if e <= tol {
                break;
            }
            cum += e;
            rank += 1;
            if cum / total >= rank_threshold {
                break;
            }
        }
    }
    let mut basis = Vec::with_capacity(rank * dim);
    for &i in order.iter().take(rank) {
        basis.extend_from_slice(v_t.row(i).transpose().as_slice());
    }
    (mean, basis, rank)
}

/// Residual of `x` against an affine subspace given as mean + orthonormal
/// row basis.
fn residual(x: &[f64], mean: &[f64], basis: &[f64], rank: usize, dim: usize) -> f64 {
    let mut centered: Vec<f64> = x.iter().zip(mean).map(|(a, m)| a - m).collect();
    for r in 0..rank {
        let row = &basis[r * dim..(r + 1) * dim];
        let dot: f64 = centered.iter().zip(row).map(|(a, b)| a * b).sum();
        for (c, b) in centered.iter_mut().zip(row) {
            *c -= dot * b;
        }
    }
    centered.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Fit one affine subspace per class at the given variance threshold
/// (default taste: 0.99).
pub fn ns_fit(x: &FeatureMatrix, labels: &[f64], rank_threshold: f64) -> Result<NsModel> {
    if x.rows() != labels.len() {
        return Err(Error::DimMismatch {
            context: "ns labels",
            expected: x.rows(),
            got: labels.len(),
        });
    }
    if !(rank_threshold > 0.0 && rank_threshold <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "rank_threshold",
            reason: format!("{rank_threshold} is outside (0, 1]"),
        });
    }
    let parts = class_partition(labels)?;
    if parts.len() < 2 {
        return Err(Error::SingleClass { op: "ns_fit" });
    }
    let dim = x.cols();
    let mut model = NsModel {
        classes: Vec::new(),
        means: Vec::new(),
        bases: Vec::new(),
        ranks: Vec::new(),
        dim,
        rank_threshold,
    };
    for (code, idx) in parts {
        if idx.is_empty() {
            return Err(Error::ClassTooSmall {
                class: code,
                have: 0,
                need: 1,
                op: "ns_fit",
            });
        }
        let rows: Vec<&[f64]> = idx.iter().map(|&i| x.row(i)).collect();
        let (mean, basis, rank) = subspace(&rows, dim, rank_threshold);
        model.classes.push(code);
        model.means.push(mean);
        model.bases.push(basis);
        model.ranks.push(rank);
    }
    Ok(model)
}

/// Classify rows by smallest subspace residual; exact ties go to the lower
/// class code.
pub fn ns_predict(model: &NsModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    if x.cols() != model.dim {
        return Err(Error::DimMismatch {
            context: "ns_predict",
            expected: model.dim,
            got: x.cols(),
        });
    }
    Ok((0..x.rows())
        .map(|i| {
            let row = x.row(i);
            let mut best = 0;
            let mut best_res = f64::INFINITY;
            for c in 0..model.classes.len() {
                let res = residual(
                    row,
                    &model.means[c],
                    &model.bases[c],
                    model.ranks[c],
                    model.dim,
                );
                if res < best_res {
                    best_res = res;
                    best = c;
                }
            }
            model.classes[best]
        })
        .collect())
}

/// Local variant: for each test row, fit a fresh subspace to the `k_nn`
/// nearest training rows of each class and compare residuals.
pub fn local_ns_predict(
    train: &FeatureMatrix,
    labels: &[f64],
    test: &FeatureMatrix,
    k_nn: usize,
    rank_threshold: f64,
) -> Result<Vec<f64>> {
    if train.rows() != labels.len() {
        return Err(Error::DimMismatch {
            context: "local ns labels",
            expected: train.rows(),
            got: labels.len(),
        });
    }
    if train.cols() != test.cols() {
        return Err(Error::DimMismatch {
            context: "local ns features",
            expected: train.cols(),
            got: test.cols(),
        });
    }
    if k_nn == 0 {
        return Err(Error::InvalidParameter {
            name: "k_nn",
            reason: "must be at least 1".into(),
        });
    }
    if !(rank_threshold > 0.0 && rank_threshold <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "rank_threshold",
            reason: format!("{rank_threshold} is outside (0, 1]"),
        });
    }
    let parts = class_partition(labels)?;
    if parts.len() < 2 {
        return Err(Error::SingleClass { op: "local_ns_predict" });
    }
    for (code, idx) in &parts {
        if idx.len() < k_nn {
            return Err(Error::ClassTooSmall {
                class: *code,
                have: idx.len(),
                need: k_nn,
                op: "local_ns_predict",
            });
        }
    }
    let dim = train.cols();
    let mut out = Vec::with_capacity(test.rows());
    for t in 0..test.rows() {
        let point = test.row(t);
        let mut best_code = parts[0].0;
        let mut best_res = f64::INFINITY;
        for (code, idx) in &parts {
            // Nearest class rows; distance ties break on row order.
            let mut by_dist: Vec<(f64, usize)> = idx
                .iter()
                .map(|&i| {
                    let d: f64 = train
                        .row(i)
                        .iter()
                        .zip(point)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, i)
                })
                .collect();
            by_dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let rows: Vec<&[f64]> = by_dist[..k_nn].iter().map(|&(_, i)| train.row(i)).collect();
            let (mean, basis, rank) = subspace(&rows, dim, rank_threshold);
            let res = residual(point, &mean, &basis, rank, dim);
            if res < best_res {
                best_res = res;
                best_code = *code;
            }
        }
        out.push(best_code);
    }
    Ok(out)
}
