//! Penalized linear discriminant analysis.
//!
//! The discriminant maximizes `w' S_T w / w' (S_W + alpha I) w`, sliding
//! between Fisher LDA (alpha -> 0) and the leading total-scatter direction
//! (alpha -> infinity). `alpha` is picked automatically by scanning a log
//! grid for the first stability plateau of the fitted direction.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::{class_partition, direction_angle, to_dmatrix};
use crate::embedding::FeatureMatrix;
use crate::{Error, Result};

/// Fitted penalized discriminant.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    /// Unit-norm discriminant direction, length `k`.
    pub w: Vec<f64>,
    pub alpha: f64,
    /// Decision offset: predict the higher class code iff `score + b > 0`.
    pub b: f64,
    /// Class codes seen at fit time, ascending.
    pub classes: Vec<f64>,
    /// Sample standard deviation of the training scores.
    pub score_std: f64,
    pub dim: usize,
}

/// Total and within-class scatter matrices of `z`.
fn scatter_matrices(
    z: &FeatureMatrix,
    labels: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<(f64, Vec<f64>)>)> {
    if z.rows() != labels.len() {
        return Err(Error::DimMismatch {
            context: "plda labels",
            expected: z.rows(),
            got: labels.len(),
        });
    }
    if z.rows() == 0 {
        return Err(Error::EmptyInput { what: "plda data" });
    }
    let k = z.cols();
    let x = to_dmatrix(z);
    let grand = x.row_mean().transpose();
    let mut s_t = DMatrix::zeros(k, k);
    for i in 0..z.rows() {
        let d = x.row(i).transpose() - &grand;
        s_t += &d * d.transpose();
    }
    let parts = class_partition(labels)?;
    let mut s_w = DMatrix::zeros(k, k);
    let mut class_means = Vec::with_capacity(parts.len());
    for (code, idx) in &parts {
        let mut mu = DVector::zeros(k);
        for &i in idx {
            mu += x.row(i).transpose();
        }
        mu /= idx.len() as f64;
        for &i in idx {
            let d = x.row(i).transpose() - &mu;
            s_w += &d * d.transpose();
        }
        class_means.push((*code, mu.as_slice().to_vec()));
    }
    Ok((s_t, s_w, class_means))
}

/// Fit the discriminant at a fixed penalty `alpha`.
pub fn plda_fit(z: &FeatureMatrix, labels: &[f64], alpha: f64) -> Result<PldaModel> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("{alpha} is not a finite non-negative penalty"),
        });
    }
    let (s_t, s_w, class_means) = scatter_matrices(z, labels)?;
    if class_means.len() < 2 {
        return Err(Error::NotBinary {
            op: "plda_fit",
            found: class_means.len(),
        });
    }
    let k = z.cols();
    let mut pencil = s_w.clone();
    for i in 0..k {
        pencil[(i, i)] += alpha;
    }
    let chol = Cholesky::new(pencil).ok_or(Error::SingularPencil { alpha })?;
    let l = chol.l();
    // Whiten the pencil: M = L^-1 S_T L^-T is symmetric with the same top
    // generalized eigenvector after the change of basis.
    let m1 = l.solve_lower_triangular(&s_t).ok_or(Error::SingularPencil { alpha })?;
    let m2 = l
        .solve_lower_triangular(&m1.transpose())
        .ok_or(Error::SingularPencil { alpha })?;
    let sym = (&m2 + m2.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut top = 0;
    for i in 0..k {
        if eig.eigenvalues[i] > eig.eigenvalues[top] {
            top = i;
        }
    }
    let v = eig.eigenvectors.column(top).into_owned();
    let mut w = l
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or(Error::SingularPencil { alpha })?;
    w /= w.norm();
    // Sign: the class with the larger code projects positively relative to
    // the midpoint.
    let (lo_code, lo_mean) = class_means.first().unwrap();
    let (hi_code, hi_mean) = class_means.last().unwrap();
    debug_assert!(hi_code > lo_code);
    let dot = |m: &[f64], w: &[f64]| -> f64 { m.iter().zip(w).map(|(a, b)| a * b).sum() };
    if dot(hi_mean, w.as_slice()) < dot(lo_mean, w.as_slice()) {
        w = -w;
    }
    let b = -0.5 * (dot(hi_mean, w.as_slice()) + dot(lo_mean, w.as_slice()));
    let w: Vec<f64> = w.as_slice().to_vec();
    let scores: Vec<f64> = (0..z.rows())
        .map(|i| z.row(i).iter().zip(&w).map(|(a, b)| a * b).sum())
        .collect();
    let mean_score = scores.iter().sum::<f64>() / scores.len() as f64;
    let score_std = (scores
        .iter()
        .map(|s| (s - mean_score).powi(2))
        .sum::<f64>()
        / (scores.len().max(2) - 1) as f64)
        .sqrt();
    Ok(PldaModel {
        w,
        alpha,
        b,
        classes: class_means.iter().map(|(c, _)| *c).collect(),
        score_std,
        dim: k,
    })
}

/// The default penalty candidates: 25 log-spaced points spanning
/// `1e-4 tau` to `1e2 tau` with `tau = trace(S_W) / k`.
pub fn default_alpha_grid(z: &FeatureMatrix, labels: &[f64]) -> Result<Vec<f64>> {
    let (_, s_w, _) = scatter_matrices(z, labels)?;
    let tau = (s_w.trace() / z.cols() as f64).max(1e-300);
    let lo = (1e-4 * tau).ln();
    let hi = (1e2 * tau).ln();
    let points = 25;
    Ok((0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .collect())
}

/// Scan `grid` (ascending; defaults to [`default_alpha_grid`]) and return
/// the smallest candidate where the fitted direction has stabilized, i.e.
/// the angle to the next candidate's direction drops below 2 degrees. Falls
/// back to the grid median when no plateau exists. The result is always an
/// element of the grid.
pub fn calculate_alpha(z: &FeatureMatrix, labels: &[f64], grid: Option<&[f64]>) -> Result<f64> {
    let default;
    let grid = match grid {
        Some(g) => g,
        None => {
            default = default_alpha_grid(z, labels)?;
            &default
        }
    };
    if grid.is_empty() {
        return Err(Error::EmptyInput { what: "alpha grid" });
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: "alpha candidates must be strictly ascending".into(),
        });
    }
    let directions: Vec<Vec<f64>> = grid
        .iter()
        .map(|&alpha| plda_fit(z, labels, alpha).map(|m| m.w))
        .collect::<Result<_>>()?;
    let theta_stab = 2.0_f64.to_radians();
    for i in 0..directions.len().saturating_sub(1) {
        if direction_angle(&directions[i], &directions[i + 1]) < theta_stab {
            return Ok(grid[i]);
        }
    }
    Ok(grid[grid.len() / 2])
}

/// Project rows onto the discriminant: one score per row.
pub fn plda_transform(model: &PldaModel, z: &FeatureMatrix) -> Result<Vec<f64>> {
    if z.cols() != model.dim {
        return Err(Error::DimMismatch {
            context: "plda_transform",
            expected: model.dim,
            got: z.cols(),
        });
    }
    Ok((0..z.rows())
        .map(|i| z.row(i).iter().zip(&model.w).map(|(a, b)| a * b).sum())
        .collect())
}

/// Threshold the scores: the higher class code wins iff `score + b > 0`,
/// with exact ties going to the higher code.
pub fn plda_predict(model: &PldaModel, z: &FeatureMatrix) -> Result<Vec<f64>> {
    if model.classes.len() != 2 {
        return Err(Error::NotBinary {
            op: "plda_predict",
            found: model.classes.len(),
        });
    }
    let scores = plda_transform(model, z)?;
    let (lo, hi) = (model.classes[0], model.classes[1]);
    Ok(scores
        .iter()
        .map(|s| if s + model.b >= 0.0 { hi } else { lo })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    /// Two Gaussian classes separated along the first axis.
    fn two_class_data(n_per: usize, sep: f64, dims: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
        let mut rng = synth::rng(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per {
            let class = (i % 2) as f64;
            for d in 0..dims {
                let mut v = synth::normal(&mut rng);
                if d == 0 {
                    v += class * sep;
                }
                data.push(v);
            }
            labels.push(class);
        }
        (FeatureMatrix::new(2 * n_per, dims, data).unwrap(), labels)
    }

    #[test]
    fn separated_classes_give_axis_direction_and_perfect_training_accuracy() {
        let (z, labels) = two_class_data(200, 8.0, 3, 2);
        let model = plda_fit(&z, &labels, 1e-3).unwrap();
        assert!(model.w[0].abs() > 0.99, "w = {:?}", model.w);
        // Higher code projects positive.
        assert!(model.w[0] > 0.0);
        let pred = plda_predict(&model, &z).unwrap();
        assert_eq!(pred, labels);
    }

    #[test]
    fn w_is_a_generalized_eigenvector() {
        let (z, labels) = two_class_data(25, 3.0, 4, 5);
        let alpha = 0.5;
        let model = plda_fit(&z, &labels, alpha).unwrap();
        let (s_t, s_w, _) = scatter_matrices(&z, &labels).unwrap();
        let k = z.cols();
        let mut pencil = s_w;
        for i in 0..k {
            pencil[(i, i)] += alpha;
        }
        let w = DVector::from_column_slice(&model.w);
        let num = (w.transpose() * &s_t * &w)[(0, 0)];
        let den = (w.transpose() * &pencil * &w)[(0, 0)];
        let mu = num / den;
        let residual = (&s_t * &w - &pencil * &w * mu).norm() / s_t.norm();
        assert!(residual < 1e-6, "residual {residual}");
        // Rayleigh quotient beats random unit vectors.
        let mut rng = synth::rng(77);
        for _ in 0..200 {
            let v = DVector::from_iterator(k, (0..k).map(|_| synth::normal(&mut rng))).normalize();
            let q = (v.transpose() * &s_t * &v)[(0, 0)] / (v.transpose() * &pencil * &v)[(0, 0)];
            assert!(q <= mu * (1.0 + 1e-9));
        }
    }

    #[test]
    fn alpha_limits_hit_lda_and_pca() {
        let (z, labels) = two_class_data(30, 2.5, 3, 9);
        let (s_t, s_w, means) = scatter_matrices(&z, &labels).unwrap();
        // Fisher direction: S_W^-1 (mu_hi - mu_lo).
        let diff = DVector::from_iterator(
            3,
            means[1].1.iter().zip(&means[0].1).map(|(a, b)| a - b),
        );
        let fisher = s_w.clone().try_inverse().unwrap() * diff;
        let tiny = plda_fit(&z, &labels, 1e-9).unwrap();
        let angle = super::super::direction_angle(&tiny.w, fisher.as_slice());
        assert!(angle.cos().abs() > 0.999, "lda angle {angle}");
        // Huge alpha: top eigenvector of S_T.
        let eig = SymmetricEigen::new(s_t.clone());
        let mut top = 0;
        for i in 0..3 {
            if eig.eigenvalues[i] > eig.eigenvalues[top] {
                top = i;
            }
        }
        let pc = eig.eigenvectors.column(top).into_owned();
        let huge = plda_fit(&z, &labels, 1e9 * s_t.trace()).unwrap();
        let angle = super::super::direction_angle(&huge.w, pc.as_slice());
        assert!(angle.cos().abs() > 0.999, "pca angle {angle}");
    }

    #[test]
    fn singular_pencil_is_reported_at_alpha_zero() {
        // Two samples per class at identical points: S_W = 0.
        let z = FeatureMatrix::new(4, 2, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let labels = vec![0.0, 0.0, 1.0, 1.0];
        assert!(matches!(
            plda_fit(&z, &labels, 0.0),
            Err(Error::SingularPencil { .. })
        ));
        assert!(plda_fit(&z, &labels, 1e-6).is_ok());
    }

    #[test]
    fn scaling_equivariance_keeps_predictions() {
        let (z, labels) = two_class_data(20, 2.0, 3, 12);
        let c = 3.7;
        let scaled = FeatureMatrix::new(
            z.rows(),
            z.cols(),
            z.data().iter().map(|v| c * v).collect(),
        )
        .unwrap();
        let alpha = 0.8;
        let base = plda_fit(&z, &labels, alpha).unwrap();
        let scaled_model = plda_fit(&scaled, &labels, c * c * alpha).unwrap();
        let angle = super::super::direction_angle(&base.w, &scaled_model.w);
        assert!(angle < 1e-8);
        assert_eq!(
            plda_predict(&base, &z).unwrap(),
            plda_predict(&scaled_model, &scaled).unwrap()
        );
    }

    #[test]
    fn label_flip_flips_scores() {
        let (z, labels) = two_class_data(15, 3.0, 3, 21);
        let flipped: Vec<f64> = labels.iter().map(|l| 1.0 - l).collect();
        let a = plda_fit(&z, &labels, 0.1).unwrap();
        let b = plda_fit(&z, &flipped, 0.1).unwrap();
        for (x, y) in a.w.iter().zip(&b.w) {
            assert!((x + y).abs() < 1e-9);
        }
        let pa = plda_predict(&a, &z).unwrap();
        let pb = plda_predict(&b, &z).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x + y - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn calculate_alpha_returns_grid_elements() {
        let (z, labels) = two_class_data(25, 2.0, 4, 31);
        let grid = default_alpha_grid(&z, &labels).unwrap();
        assert_eq!(grid.len(), 25);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        let alpha = calculate_alpha(&z, &labels, None).unwrap();
        assert!(grid.iter().any(|&g| g == alpha));
        // Deterministic.
        assert_eq!(alpha, calculate_alpha(&z, &labels, None).unwrap());
        // Single-element grid returns it.
        assert_eq!(calculate_alpha(&z, &labels, Some(&[0.5])).unwrap(), 0.5);
        // Unsorted grids are rejected.
        assert!(calculate_alpha(&z, &labels, Some(&[1.0, 0.5])).is_err());
    }

    #[test]
    fn decision_threshold_sits_between_class_means() {
        let (z, labels) = two_class_data(30, 5.0, 2, 41);
        let model = plda_fit(&z, &labels, 1e-2).unwrap();
        let (_, _, means) = scatter_matrices(&z, &labels).unwrap();
        let proj = |m: &[f64]| -> f64 { m.iter().zip(&model.w).map(|(a, b)| a * b).sum() };
        let mid = 0.5 * (proj(&means[0].1) + proj(&means[1].1));
        assert!((model.b + mid).abs() < 1e-9);
        // Class-mean rows score symmetrically about -b.
        let mean_rows = FeatureMatrix::from_rows(vec![means[0].1.clone(), means[1].1.clone()]).unwrap();
        let scores = plda_transform(&model, &mean_rows).unwrap();
        assert!((scores[0] + model.b + scores[1] + model.b).abs() < 1e-9);
    }
}
