//! Inverse-transport visualization: sample features along fitted model
//! directions, reconstruct each sample as a volume, and emit deterministic
//! grayscale figures.

mod canvas;
mod font;
mod montage;
mod plot;

pub use canvas::Canvas;
pub use montage::{default_slice, emit_montage, SliceAxis};
pub use plot::{emit_confusion, emit_projection_plot, emit_roc};

use crate::embedding::defeaturize;
use crate::grid::DensityVolume;
use crate::solver::{invert_field, pushforward, SolverConfig};
use crate::stats::{CcaModel, PcaModel, PldaModel};
use crate::{Error, Result};

/// Default sampling multipliers for PCA and PLDA modes.
pub const DEFAULT_MODE_ALPHAS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
/// Default sampling multipliers for CCA modes.
pub const DEFAULT_CCA_ALPHAS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

/// A feature-space direction to visualize: samples are taken at
/// `mean + alpha * sigma * direction` for each multiplier in `alphas`.
#[derive(Debug, Clone)]
pub struct ModeSpec {
    /// Short name used in captions and file names.
    pub name: String,
    /// Unit-norm feature-space direction (length 3·h·w·d).
    pub direction: Vec<f64>,
    /// Sampling multipliers, ascending, always containing 0.
    pub alphas: Vec<f64>,
    /// Scale: standard deviation of the training projections.
    pub sigma: f64,
}

impl ModeSpec {
    pub fn new(
        name: impl Into<String>,
        direction: Vec<f64>,
        alphas: &[f64],
        sigma: f64,
    ) -> Result<ModeSpec> {
        if direction.is_empty() {
            return Err(Error::EmptyInput { what: "mode direction" });
        }
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::DegenerateData {
                context: "mode direction",
                reason: format!("norm {norm} is not positive and finite"),
            });
        }
        let direction = direction.iter().map(|v| v / norm).collect();
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("must be finite and non-negative, got {sigma}"),
            });
        }
        if alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "alphas",
                reason: "must all be finite".into(),
            });
        }
        let mut alphas = alphas.to_vec();
        alphas.push(0.0);
        alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        alphas.dedup();
        Ok(ModeSpec {
            name: name.into(),
            direction,
            alphas,
            sigma,
        })
    }

    /// Replace the sampling multipliers, re-applying the sort/zero rules.
    pub fn with_alphas(self, alphas: &[f64]) -> Result<ModeSpec> {
        ModeSpec::new(self.name, self.direction, alphas, self.sigma)
    }
}

/// Reconstruct one volume per `spec.alphas` entry: the feature point
/// `mean_feature + alpha * sigma * direction` is mapped back to a transport
/// map, inverted, and used to push the reference forward. Output order
/// matches `spec.alphas`.
pub fn mode_volumes(
    spec: &ModeSpec,
    mean_feature: &[f64],
    reference: &DensityVolume,
) -> Result<Vec<DensityVolume>> {
    if mean_feature.len() != spec.direction.len() {
        return Err(Error::DimMismatch {
            context: "mode direction vs mean feature",
            expected: mean_feature.len(),
            got: spec.direction.len(),
        });
    }
    if mean_feature.len() != 3 * reference.grid().len() {
        return Err(Error::DimMismatch {
            context: "feature vs reference grid",
            expected: 3 * reference.grid().len(),
            got: mean_feature.len(),
        });
    }
    let cfg = SolverConfig::default();
    let mut out = Vec::with_capacity(spec.alphas.len());
    for &alpha in &spec.alphas {
        let scale = alpha * spec.sigma;
        let feature: Vec<f64> = mean_feature
            .iter()
            .zip(&spec.direction)
            .map(|(m, d)| m + scale * d)
            .collect();
        let f = defeaturize(&feature, reference)?;
        let inv = invert_field(&f, cfg.invert_tol, cfg.invert_max_iters)?;
        out.push(pushforward(reference, &inv.field)?);
    }
    Ok(out)
}

/// Combine PCA components with weights into one feature-space direction.
fn lift_through_basis(weights: &[f64], pca: &PcaModel, context: &'static str) -> Result<Vec<f64>> {
    if weights.len() != pca.k {
        return Err(Error::DimMismatch {
            context,
            expected: pca.k,
            got: weights.len(),
        });
    }
    let mut direction = vec![0.0; pca.d];
    for (j, &w) in weights.iter().enumerate() {
        for (d, v) in pca.component(j).iter().enumerate() {
            direction[d] += w * v;
        }
    }
    Ok(direction)
}

/// Lift a PLDA discriminant from PCA score space into feature space. The
/// sigma is the standard deviation of the training discriminant scores.
pub fn plda_direction_lift(plda: &PldaModel, pca: &PcaModel) -> Result<ModeSpec> {
    let direction = lift_through_basis(&plda.w, pca, "plda direction vs pca basis")?;
    ModeSpec::new("plda", direction, &DEFAULT_MODE_ALPHAS, plda.score_std)
}

/// Lift a CCA direction from PCA score space into feature space, sampling at
/// the supplied multipliers. The sigma is the standard deviation of the
/// training canonical projections.
pub fn cca_direction_lift(cca: &CcaModel, pca: &PcaModel, stds: &[f64]) -> Result<ModeSpec> {
    let direction = lift_through_basis(&cca.a, pca, "cca direction vs pca basis")?;
    ModeSpec::new("cca", direction, stds, cca.score_std)
}

/// The `i`-th PCA component as a mode, scaled by that component's standard
/// deviation.
pub fn pca_mode(pca: &PcaModel, i: usize) -> Result<ModeSpec> {
    if i >= pca.k {
        return Err(Error::InvalidParameter {
            name: "mode",
            reason: format!("component {i} out of range for k={}", pca.k),
        });
    }
    ModeSpec::new(
        format!("pca-{i}"),
        pca.component(i).to_vec(),
        &DEFAULT_MODE_ALPHAS,
        pca.explained_variance[i].sqrt(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{featurize, FeatureMatrix};
    use crate::grid::{GridSpec, VectorField};
    use crate::stats::{cca_fit, pca_fit, plda_fit, plda_transform, pca_transform};
    use crate::synth;

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in a.iter().zip(b) {
            num += (x - ma) * (y - mb);
            va += (x - ma).powi(2);
            vb += (y - mb).powi(2);
        }
        num / (va.sqrt() * vb.sqrt())
    }

    fn feature_data(n: usize, dims: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
        let mut rng = synth::rng(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let class = (i % 2) as f64;
            rows.push(
                (0..dims)
                    .map(|d| synth::normal(&mut rng) + if d == 0 { 4.0 * class } else { 0.0 })
                    .collect::<Vec<_>>(),
            );
            labels.push(class);
        }
        (FeatureMatrix::from_rows(rows).unwrap(), labels)
    }

    #[test]
    fn mode_spec_normalizes_and_orders() {
        let spec = ModeSpec::new("m", vec![3.0, 0.0, 4.0], &[2.0, -2.0], 1.5).unwrap();
        assert!((spec.direction.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(spec.alphas, vec![-2.0, 0.0, 2.0]);
        let spec = spec.with_alphas(&[1.0, 0.0, -1.0, 0.0]).unwrap();
        assert_eq!(spec.alphas, vec![-1.0, 0.0, 1.0]);
        assert!(ModeSpec::new("m", vec![0.0, 0.0], &[0.0], 1.0).is_err());
        assert!(ModeSpec::new("m", vec![1.0], &[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn plda_lift_reproduces_training_scores() {
        let (x, labels) = feature_data(30, 12, 3);
        let pca = pca_fit(&x, 1.0).unwrap();
        let z = pca_transform(&pca, &x).unwrap();
        let plda = plda_fit(&z, &labels, 0.1).unwrap();
        let spec = plda_direction_lift(&plda, &pca).unwrap();
        assert!((spec.direction.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(spec.sigma, plda.score_std);

        let scores = plda_transform(&plda, &z).unwrap();
        let lifted: Vec<f64> = (0..x.rows())
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(&pca.mean)
                    .zip(&spec.direction)
                    .map(|((v, m), d)| (v - m) * d)
                    .sum()
            })
            .collect();
        assert!((correlation(&lifted, &scores) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cca_lift_reproduces_canonical_scores() {
        let (x, labels) = feature_data(40, 10, 7);
        let pca = pca_fit(&x, 1.0).unwrap();
        let z = pca_transform(&pca, &x).unwrap();
        let y = FeatureMatrix::new(labels.len(), 1, labels.clone()).unwrap();
        let cca = cca_fit(&z, &y, None).unwrap();
        let spec = cca_direction_lift(&cca, &pca, &DEFAULT_CCA_ALPHAS).unwrap();
        assert_eq!(spec.alphas, DEFAULT_CCA_ALPHAS.to_vec());

        let canon = cca.x_scores(&z).unwrap();
        let lifted: Vec<f64> = (0..x.rows())
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(&pca.mean)
                    .zip(&spec.direction)
                    .map(|((v, m), d)| (v - m) * d)
                    .sum()
            })
            .collect();
        assert!((correlation(&lifted, &canon) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn basis_aligned_weights_recover_the_component() {
        let (x, labels) = feature_data(24, 8, 11);
        let pca = pca_fit(&x, 1.0).unwrap();
        let mut plda = plda_fit(
            &pca_transform(&pca, &x).unwrap(),
            &labels,
            0.5,
        )
        .unwrap();
        plda.w = vec![0.0; pca.k];
        plda.w[0] = 1.0;
        let spec = plda_direction_lift(&plda, &pca).unwrap();
        for (a, b) in spec.direction.iter().zip(pca.component(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Translation direction: reconstructed volumes march along the axis
    /// linearly in alpha, symmetric about the alpha=0 center.
    #[test]
    fn translation_mode_shifts_center_of_mass_linearly() {
        let grid = GridSpec::cube(24).unwrap();
        let reference = synth::gaussian_blob(grid, [11.5, 11.5, 11.5], 2.5).unwrap();
        let mut shift = VectorField::identity(grid);
        for v in shift.component_mut(0) {
            *v += 1.0;
        }
        let direction = featurize(&shift, &reference).unwrap();
        let spec = ModeSpec::new("t", direction, &[-1.0, 0.0, 1.0], 2.0).unwrap();
        let mean = vec![0.0; 3 * grid.len()];
        let vols = mode_volumes(&spec, &mean, &reference).unwrap();
        assert_eq!(vols.len(), 3);

        let coms: Vec<f64> = vols.iter().map(|v| v.center_of_mass()[0]).collect();
        // alpha = 0 keeps the reference center.
        assert!((coms[1] - 11.5).abs() < 1e-6);
        // Symmetric alphas sit symmetrically about the center.
        assert!(
            ((coms[2] - coms[1]) + (coms[0] - coms[1])).abs() < 0.3,
            "coms {coms:?}"
        );
        // And the step is linear in alpha: one step of sigma = 2 voxels.
        assert!((coms[2] - coms[1] - 2.0).abs() < 0.3, "coms {coms:?}");
        for v in &vols {
            assert!(v.is_mass_normalized());
            assert!(v.values().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn alpha_zero_ignores_the_direction() {
        let grid = GridSpec::cube(12).unwrap();
        let reference = synth::gaussian_blob(grid, [5.5, 5.5, 5.5], 2.0).unwrap();
        let n = 3 * grid.len();
        let mut rng = synth::rng(5);
        let d1: Vec<f64> = (0..n).map(|_| synth::normal(&mut rng)).collect();
        let d2: Vec<f64> = (0..n).map(|_| synth::normal(&mut rng)).collect();
        let mean: Vec<f64> = (0..n).map(|_| 0.02 * synth::normal(&mut rng)).collect();
        let s1 = ModeSpec::new("a", d1, &[0.0], 1.0).unwrap();
        let s2 = ModeSpec::new("b", d2, &[0.0], 1.0).unwrap();
        let v1 = mode_volumes(&s1, &mean, &reference).unwrap();
        let v2 = mode_volumes(&s2, &mean, &reference).unwrap();
        assert_eq!(v1[0].values(), v2[0].values());
    }

    #[test]
    fn zero_mean_feature_reconstructs_the_reference() {
        let grid = GridSpec::cube(10).unwrap();
        let reference = synth::gaussian_blob(grid, [4.5, 4.5, 4.5], 1.8).unwrap();
        let spec = ModeSpec::new("id", vec![1.0; 3 * grid.len()], &[0.0], 1.0).unwrap();
        let vols = mode_volumes(&spec, &vec![0.0; 3 * grid.len()], &reference).unwrap();
        let err = vols[0].relative_l2(&reference).unwrap();
        assert!(err < 1e-10, "relative error {err}");
    }

    #[test]
    fn dimension_mismatches_are_reported() {
        let grid = GridSpec::cube(8).unwrap();
        let reference = synth::gaussian_blob(grid, [3.5, 3.5, 3.5], 1.5).unwrap();
        let spec = ModeSpec::new("m", vec![1.0; 10], &[0.0], 1.0).unwrap();
        assert!(mode_volumes(&spec, &vec![0.0; 10], &reference).is_err());
        let ok_len = 3 * grid.len();
        let spec = ModeSpec::new("m", vec![1.0; ok_len], &[0.0], 1.0).unwrap();
        assert!(mode_volumes(&spec, &vec![0.0; ok_len - 1], &reference).is_err());
    }
}
