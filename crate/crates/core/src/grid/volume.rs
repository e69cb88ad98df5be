//! Non-negative scalar densities on a voxel grid.

use super::{interp, resample, GridSpec};
use crate::{Error, Result};

/// A non-negative density sampled at voxel centers.
///
/// `mass_normalized` tracks whether the values currently sum to 1 within
/// `1e-9`; it is computed at construction and preserved by operations that
/// renormalize their output.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVolume {
    grid: GridSpec,
    values: Vec<f64>,
    mass_normalized: bool,
}

impl DensityVolume {
    /// Wrap raw values. Fails on a length mismatch or any negative voxel.
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimMismatch {
                context: "density values",
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::NegativeValue { index, value });
        }
        let sum: f64 = values.iter().sum();
        let mass_normalized = (sum - 1.0).abs() <= 1e-9;
        Ok(DensityVolume {
            grid,
            values,
            mass_normalized,
        })
    }

    /// A constant volume with the given total mass.
    pub fn uniform(grid: GridSpec, total_mass: f64) -> Result<Self> {
        let v = total_mass / grid.len() as f64;
        DensityVolume::new(grid, vec![v; grid.len()])
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_mass_normalized(&self) -> bool {
        self.mass_normalized
    }

    /// Mean of the strictly positive voxels, or 0 if there are none.
    pub fn mean_positive(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for &v in &self.values {
            if v > 0.0 {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Shift by `epsilon` times the mean positive value, then rescale to unit
    /// mass: `w = (v + eps * m) / sum(v + eps * m)`.
    ///
    /// The floor keeps downstream logs and divisions finite on volumes with
    /// empty background. With `epsilon = 0` an already-normalized volume is
    /// returned unchanged (idempotence). Fails with [`Error::ZeroMass`] when
    /// the shifted volume still sums to zero and with
    /// [`Error::NegativeValue`] if any input voxel is negative (impossible
    /// for values constructed through [`DensityVolume::new`], but re-checked
    /// so the contract holds for all callers).
    pub fn normalize_mass(&self, epsilon: f64) -> Result<DensityVolume> {
        normalize_mass_values(&self.values, epsilon).map(|values| DensityVolume {
            grid: self.grid,
            values,
            mass_normalized: true,
        })
    }

    /// Trilinear sample at `p`, clamped at the boundary.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        interp::trilinear(&self.values, &self.grid, p)
    }

    /// Resample onto `target`: per-axis interval-overlap averaging when
    /// shrinking, trilinear interpolation when growing, then rescale so the
    /// total mass matches the input exactly. Boundary extrapolation during
    /// growth can produce small negatives; those are clamped to zero before
    /// the mass rescale.
    pub fn resample(&self, target: GridSpec) -> Result<DensityVolume> {
        let mut values = resample::resample_values(&self.values, &self.grid, &target)?;
        for v in &mut values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let out = DensityVolume::new(target, values)?;
        let before = self.sum();
        let after = out.sum();
        if before > 0.0 && after > 0.0 {
            let scale = before / after;
            let values = out.values.iter().map(|v| v * scale).collect();
            return Ok(DensityVolume {
                grid: target,
                values,
                mass_normalized: self.mass_normalized,
            });
        }
        Ok(out)
    }

    /// Mass-weighted mean position. Returns the grid center for an all-zero
    /// volume.
    pub fn center_of_mass(&self) -> [f64; 3] {
        let total = self.sum();
        if total <= 0.0 {
            return self.grid.center();
        }
        let mut com = [0.0; 3];
        for (idx, c) in self.grid.iter_coords().enumerate() {
            let v = self.values[idx];
            com[0] += v * c[0] as f64;
            com[1] += v * c[1] as f64;
            com[2] += v * c[2] as f64;
        }
        [com[0] / total, com[1] / total, com[2] / total]
    }

    /// Mass-weighted second moment about the center of mass, a scalar spread
    /// measure: `sum_x I(x) |x - com|^2 / sum_x I(x)`.
    pub fn second_moment(&self) -> f64 {
        let total = self.sum();
        if total <= 0.0 {
            return 0.0;
        }
        let com = self.center_of_mass();
        let mut acc = 0.0;
        for (idx, c) in self.grid.iter_coords().enumerate() {
            let dx = c[0] as f64 - com[0];
            let dy = c[1] as f64 - com[1];
            let dz = c[2] as f64 - com[2];
            acc += self.values[idx] * (dx * dx + dy * dy + dz * dz);
        }
        acc / total
    }

    /// Voxelwise mean of several same-grid volumes, renormalized to unit
    /// mass (inputs are expected to be normalized already).
    pub fn mean_of(volumes: &[DensityVolume]) -> Result<DensityVolume> {
        let first = volumes.first().ok_or(Error::EmptyInput { what: "volumes" })?;
        let grid = first.grid;
        let mut acc = vec![0.0; grid.len()];
        for v in volumes {
            if v.grid != grid {
                return Err(Error::grid_mismatch(grid, v.grid));
            }
            for (a, x) in acc.iter_mut().zip(&v.values) {
                *a += x;
            }
        }
        let n = volumes.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        DensityVolume::new(grid, acc)?.normalize_mass(0.0)
    }

    /// Relative L2 distance `||a - b||_2 / ||b||_2`.
    pub fn relative_l2(&self, other: &DensityVolume) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::grid_mismatch(self.grid, other.grid));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        if den == 0.0 {
            return Err(Error::DegenerateData {
                context: "relative_l2",
                reason: "reference volume is identically zero".into(),
            });
        }
        Ok((num / den).sqrt())
    }

    /// L1 distance `sum |a - b|`.
    pub fn l1_distance(&self, other: &DensityVolume) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::grid_mismatch(self.grid, other.grid));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Value-level normalization shared by [`DensityVolume::normalize_mass`] and
/// callers that work on raw slices.
pub(crate) fn normalize_mass_values(values: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeValue { index, value });
    }
    let mut sum = 0.0;
    let mut pos_sum = 0.0;
    let mut pos_n = 0usize;
    for &v in values {
        sum += v;
        if v > 0.0 {
            pos_sum += v;
            pos_n += 1;
        }
    }
    let floor = if pos_n > 0 {
        epsilon * pos_sum / pos_n as f64
    } else {
        0.0
    };
    let total = sum + floor * values.len() as f64;
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(values.iter().map(|v| (v + floor) / total).collect())
}
