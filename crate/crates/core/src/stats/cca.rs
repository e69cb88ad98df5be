//! Regularized canonical correlation analysis (first canonical pair).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{column_means, to_dmatrix};
use crate::embedding::FeatureMatrix;
use crate::{Error, Result};

/// First canonical pair plus the projection-space regression line.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaModel {
    /// Canonical direction for X, length `k`; `a' (S_XX + eps I) a = 1`.
    pub a: Vec<f64>,
    /// Canonical direction for Y, length `q`; same normalization on Y.
    pub b: Vec<f64>,
    /// First canonical correlation, clamped to [0, 1].
    pub rho: f64,
    /// Ridge added to each covariance block (X, Y).
    pub ridge_x: f64,
    pub ridge_y: f64,
    /// Regression of the raw Y-projection on the raw X-projection.
    pub slope: f64,
    pub intercept: f64,
    /// Column means of X and Y at fit time.
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    /// Sample standard deviation of the training X-projections.
    pub score_std: f64,
}

/// Inverse symmetric square root via eigendecomposition; eigenvalues are
/// floored at `floor` to stay finite on nearly-singular blocks.
fn inv_sqrt(m: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let lambda = eig.eigenvalues[i].max(floor);
        let v = eig.eigenvectors.column(i);
        out += v * v.transpose() / lambda.sqrt();
    }
    out
}

/// Fit the first canonical pair of `(z, y)` with ridge-regularized
/// covariance blocks. `ridge = None` uses `1e-6 trace(S)/dim` per block.
pub fn cca_fit(z: &FeatureMatrix, y: &FeatureMatrix, ridge: Option<f64>) -> Result<CcaModel> {
    if z.rows() != y.rows() {
        return Err(Error::DimMismatch {
            context: "cca rows",
            expected: z.rows(),
            got: y.rows(),
        });
    }
    let n = z.rows();
    if n <= 2 {
        return Err(Error::DegenerateData {
            context: "cca_fit",
            reason: format!("need more than 2 samples, got {n}"),
        });
    }
    if let Some(r) = ridge {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "ridge",
                reason: format!("{r} is not a finite non-negative ridge"),
            });
        }
    }
    let (k, q) = (z.cols(), y.cols());
    let mean_x = column_means(z);
    let mean_y = column_means(y);
    let mut xc = to_dmatrix(z);
    for mut row in xc.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean_x) {
            *v -= m;
        }
    }
    let mut yc = to_dmatrix(y);
    for mut row in yc.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean_y) {
            *v -= m;
        }
    }
    let denom = (n - 1) as f64;
    let sxx = xc.transpose() * &xc / denom;
    let syy = yc.transpose() * &yc / denom;
    let sxy = xc.transpose() * &yc / denom;
    let y_scale: f64 = to_dmatrix(y).iter().map(|v| v * v).sum::<f64>() / (n * q) as f64;
    if syy.trace() <= 1e-16 * y_scale.max(1e-300) {
        return Err(Error::DegenerateTarget);
    }
    let ridge_x = ridge.unwrap_or(1e-6 * sxx.trace() / k as f64);
    let ridge_y = ridge.unwrap_or(1e-6 * syy.trace() / q as f64);
    let mut rxx = sxx;
    for i in 0..k {
        rxx[(i, i)] += ridge_x;
    }
    let mut ryy = syy;
    for i in 0..q {
        ryy[(i, i)] += ridge_y;
    }
    let wx = inv_sqrt(rxx, 1e-14 * (1.0 + ridge_x));
    let wy = inv_sqrt(ryy, 1e-14 * (1.0 + ridge_y));
    let kmat = &wx * &sxy * &wy;
    let svd = kmat.svd(true, true);
    let mut top = 0;
    for i in 0..svd.singular_values.len() {
        if svd.singular_values[i] > svd.singular_values[top] {
            top = i;
        }
    }
    let u = svd.v_t.as_ref().map(|_| ()).and(svd.u.as_ref()).unwrap().column(top).into_owned();
    let v = svd.v_t.as_ref().unwrap().row(top).transpose();
    let mut a = (&wx * u).as_slice().to_vec();
    let mut b = (&wy * v).as_slice().to_vec();
    // SVD sign ambiguity: flip the pair together so a's largest coordinate
    // is positive (rho is invariant under the joint flip).
    let mut best = 0;
    for (i, x) in a.iter().enumerate() {
        if x.abs() > a[best].abs() {
            best = i;
        }
    }
    if a[best] < 0.0 {
        for x in a.iter_mut().chain(b.iter_mut()) {
            *x = -*x;
        }
    }
    let rho = svd.singular_values[top].clamp(0.0, 1.0);
    // Regression of the raw projections: py ~= slope * px + intercept.
    let av = DVector::from_column_slice(&a);
    let bv = DVector::from_column_slice(&b);
    let px = &xc * &av;
    let py = &yc * &bv;
    let var_px: f64 = px.iter().map(|v| v * v).sum();
    let cov: f64 = px.iter().zip(py.iter()).map(|(x, y)| x * y).sum();
    let slope = if var_px > 0.0 { cov / var_px } else { 0.0 };
    let mean_px: f64 = mean_x.iter().zip(&a).map(|(m, c)| m * c).sum();
    let mean_py: f64 = mean_y.iter().zip(&b).map(|(m, c)| m * c).sum();
    let intercept = mean_py - slope * mean_px;
    let score_std = (var_px / denom).sqrt();
    Ok(CcaModel {
        a,
        b,
        rho,
        ridge_x,
        ridge_y,
        slope,
        intercept,
        mean_x,
        mean_y,
        score_std,
    })
}

impl CcaModel {
    /// Centered X-projections of new rows.
    pub fn x_scores(&self, z: &FeatureMatrix) -> Result<Vec<f64>> {
        if z.cols() != self.mean_x.len() {
            return Err(Error::DimMismatch {
                context: "cca x_scores",
                expected: self.mean_x.len(),
                got: z.cols(),
            });
        }
        Ok((0..z.rows())
            .map(|i| {
                z.row(i)
                    .iter()
                    .zip(&self.a)
                    .zip(&self.mean_x)
                    .map(|((v, c), m)| (v - m) * c)
                    .sum()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn random_x(n: usize, k: usize, seed: u64) -> FeatureMatrix {
        let mut rng = synth::rng(seed);
        let data = (0..n * k).map(|_| synth::normal(&mut rng)).collect();
        FeatureMatrix::new(n, k, data).unwrap()
    }

    #[test]
    fn perfect_linear_target_has_unit_correlation() {
        let z = random_x(50, 3, 4);
        let c = [0.5, -1.0, 2.0];
        let y_data: Vec<f64> = (0..z.rows())
            .map(|i| z.row(i).iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + 3.0)
            .collect();
        let y = FeatureMatrix::new(z.rows(), 1, y_data).unwrap();
        let model = cca_fit(&z, &y, None).unwrap();
        assert!(model.rho >= 0.999, "rho {}", model.rho);
        // The regression line reproduces the projections on training data.
        let px: Vec<f64> = (0..z.rows())
            .map(|i| z.row(i).iter().zip(&model.a).map(|(a, b)| a * b).sum())
            .collect();
        let py: Vec<f64> = (0..z.rows()).map(|i| y.row(i)[0] * model.b[0]).collect();
        for (x, y) in px.iter().zip(&py) {
            let fit = model.slope * x + model.intercept;
            assert!((fit - y).abs() < 1e-6 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn single_target_direction_matches_closed_form() {
        for seed in [1u64, 2, 3] {
            let z = random_x(40, 4, seed);
            let mut rng = synth::rng(100 + seed);
            let y_data: Vec<f64> = (0..z.rows())
                .map(|i| z.row(i)[0] * 1.5 - z.row(i)[2] + 0.3 * synth::normal(&mut rng))
                .collect();
            let y = FeatureMatrix::new(z.rows(), 1, y_data).unwrap();
            let model = cca_fit(&z, &y, None).unwrap();
            // Oracle: a proportional to (S_XX + eps I)^-1 S_XY.
            let n = z.rows();
            let mean_x = super::super::column_means(&z);
            let mean_y = super::super::column_means(&y);
            let mut sxx = DMatrix::zeros(4, 4);
            let mut sxy = DVector::zeros(4);
            for i in 0..n {
                let d = DVector::from_iterator(
                    4,
                    z.row(i).iter().zip(&mean_x).map(|(v, m)| v - m),
                );
                sxx += &d * d.transpose();
                sxy += &d * (y.row(i)[0] - mean_y[0]);
            }
            sxx /= (n - 1) as f64;
            sxy /= (n - 1) as f64;
            for i in 0..4 {
                sxx[(i, i)] += model.ridge_x;
            }
            let oracle = sxx.try_inverse().unwrap() * sxy;
            let angle = super::super::direction_angle(&model.a, oracle.as_slice());
            assert!(angle < 1e-3, "seed {seed}: angle {angle}");
        }
    }

    #[test]
    fn canonical_normalization_holds() {
        let z = random_x(30, 3, 8);
        let y = random_x(30, 2, 9);
        let model = cca_fit(&z, &y, None).unwrap();
        let check = |x: &FeatureMatrix, dir: &[f64], mean: &[f64], ridge: f64| {
            let n = x.rows();
            let d = x.cols();
            let mut s = DMatrix::zeros(d, d);
            for i in 0..n {
                let v = DVector::from_iterator(d, x.row(i).iter().zip(mean).map(|(a, m)| a - m));
                s += &v * v.transpose();
            }
            s /= (n - 1) as f64;
            for i in 0..d {
                s[(i, i)] += ridge;
            }
            let dv = DVector::from_column_slice(dir);
            (dv.transpose() * s * dv)[(0, 0)]
        };
        assert!((check(&z, &model.a, &model.mean_x, model.ridge_x) - 1.0).abs() < 1e-8);
        assert!((check(&y, &model.b, &model.mean_y, model.ridge_y) - 1.0).abs() < 1e-8);
        assert!((0.0..=1.0).contains(&model.rho));
    }

    #[test]
    fn independent_target_has_low_correlation() {
        let z = random_x(200, 3, 14);
        let y = random_x(200, 1, 15);
        let model = cca_fit(&z, &y, None).unwrap();
        assert!(model.rho < 0.3, "rho {}", model.rho);
    }

    #[test]
    fn constant_target_is_degenerate() {
        let z = random_x(10, 3, 20);
        let y = FeatureMatrix::new(10, 1, vec![2.5; 10]).unwrap();
        assert!(matches!(cca_fit(&z, &y, None), Err(Error::DegenerateTarget)));
        let too_few = random_x(2, 3, 21);
        let y2 = FeatureMatrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(cca_fit(&too_few, &y2, None).is_err());
    }
}
