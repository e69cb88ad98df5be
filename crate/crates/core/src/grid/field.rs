//! Vector fields on voxel grids and the finite differences they need.

use super::{interp, resample, GridSpec};
use crate::{Error, Result};

/// Unconstrained scalar samples on a grid, e.g. Jacobian determinants.
/// Unlike [`super::DensityVolume`], values may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimMismatch {
                context: "scalar grid values",
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(ScalarGrid { grid, values })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// A map `f: grid -> R^3` stored as three coordinate components in flat
/// C-order. Values are absolute positions in voxel coordinates of the same
/// grid, not displacements; the identity map stores each voxel's own
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    components: [Vec<f64>; 3],
}

impl VectorField {
    pub fn new(grid: GridSpec, components: [Vec<f64>; 3]) -> Result<Self> {
        for c in &components {
            if c.len() != grid.len() {
                return Err(Error::DimMismatch {
                    context: "vector field component",
                    expected: grid.len(),
                    got: c.len(),
                });
            }
        }
        Ok(VectorField { grid, components })
    }

    /// The identity map on `grid`.
    pub fn identity(grid: GridSpec) -> VectorField {
        let mut components = [
            vec![0.0; grid.len()],
            vec![0.0; grid.len()],
            vec![0.0; grid.len()],
        ];
        for (idx, c) in grid.iter_coords().enumerate() {
            components[0][idx] = c[0] as f64;
            components[1][idx] = c[1] as f64;
            components[2][idx] = c[2] as f64;
        }
        VectorField { grid, components }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.components[axis]
    }

    /// Value at voxel flat index `idx`.
    #[inline]
    pub fn at(&self, idx: usize) -> [f64; 3] {
        [
            self.components[0][idx],
            self.components[1][idx],
            self.components[2][idx],
        ]
    }

    /// Trilinear sample at an arbitrary (possibly off-grid) point.
    pub fn sample(&self, p: [f64; 3]) -> [f64; 3] {
        [
            interp::trilinear(&self.components[0], &self.grid, p),
            interp::trilinear(&self.components[1], &self.grid, p),
            interp::trilinear(&self.components[2], &self.grid, p),
        ]
    }

    /// Displacement `f(x) - x` at voxel flat index `idx`.
    #[inline]
    pub fn displacement_at(&self, idx: usize) -> [f64; 3] {
        let c = self.grid.coords(idx);
        [
            self.components[0][idx] - c[0] as f64,
            self.components[1][idx] - c[1] as f64,
            self.components[2][idx] - c[2] as f64,
        ]
    }

    /// Largest displacement magnitude over the grid.
    pub fn max_displacement(&self) -> f64 {
        (0..self.grid.len())
            .map(|idx| {
                let d = self.displacement_at(idx);
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Pointwise convex combination `(1 - alpha) * Id + alpha * f`.
    ///
    /// `alpha` outside `[0, 1]` extrapolates; that is allowed but logged,
    /// since the interpolated map may then leave the grid.
    pub fn blend_with_identity(&self, alpha: f64) -> VectorField {
        if !(0.0..=1.0).contains(&alpha) {
            log::warn!("blending parameter {alpha} outside [0, 1]; extrapolating the map");
        }
        let mut out = self.clone();
        for (idx, c) in self.grid.iter_coords().enumerate() {
            for axis in 0..3 {
                let id = c[axis] as f64;
                out.components[axis][idx] = (1.0 - alpha) * id + alpha * self.components[axis][idx];
            }
        }
        out
    }

    /// Determinant of the Jacobian `Df` at every voxel, using central
    /// differences in the interior and one-sided differences on faces.
    /// Requires at least 2 voxels per axis.
    pub fn jacobian_determinant(&self) -> Result<ScalarGrid> {
        self.grid.require_gradients("jacobian_determinant")?;
        let partials = self.partials();
        let mut det = vec![0.0; self.grid.len()];
        for (idx, dv) in det.iter_mut().enumerate() {
            let m = |r: usize, c: usize| partials[r][c][idx];
            *dv = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
        }
        ScalarGrid::new(self.grid, det)
    }

    /// All nine partials `d f_row / d x_col` as flat grids.
    pub(crate) fn partials(&self) -> [[Vec<f64>; 3]; 3] {
        let d = |row: usize, col: usize| axis_diff(&self.components[row], &self.grid, col);
        [
            [d(0, 0), d(0, 1), d(0, 2)],
            [d(1, 0), d(1, 1), d(1, 2)],
            [d(2, 0), d(2, 1), d(2, 2)],
        ]
    }

    /// Resample onto `target`. Component values are coordinates, so after
    /// interpolating them at the target voxel positions they are converted
    /// from source units to target units with the extent-preserving affine
    /// map `x_t = (x_s - off) / s`, `s = n_s / n_t`, `off = (s - 1) / 2`.
    pub fn resample(&self, target: GridSpec) -> Result<VectorField> {
        let sd = self.grid.dims();
        let td = target.dims();
        let mut components: [Vec<f64>; 3] = Default::default();
        for axis in 0..3 {
            let vals = resample::resample_values(&self.components[axis], &self.grid, &target)?;
            let s = sd[axis] as f64 / td[axis] as f64;
            let off = (s - 1.0) / 2.0;
            components[axis] = vals.into_iter().map(|x| (x - off) / s).collect();
        }
        VectorField::new(target, components)
    }

    /// Mean of several same-grid fields (used for intrinsic means).
    pub fn mean_of(fields: &[VectorField]) -> Result<VectorField> {
        let first = fields.first().ok_or(Error::EmptyInput { what: "fields" })?;
        let grid = first.grid;
        let mut components = [
            vec![0.0; grid.len()],
            vec![0.0; grid.len()],
            vec![0.0; grid.len()],
        ];
        for f in fields {
            if f.grid != grid {
                return Err(Error::grid_mismatch(grid, f.grid));
            }
            for axis in 0..3 {
                for (a, x) in components[axis].iter_mut().zip(&f.components[axis]) {
                    *a += x;
                }
            }
        }
        let n = fields.len() as f64;
        for comp in &mut components {
            for a in comp.iter_mut() {
                *a /= n;
            }
        }
        VectorField::new(grid, components)
    }
}

/// Partial derivative of `values` along `axis`: central differences in the
/// interior, one-sided on the two boundary faces. Unit voxel spacing.
pub(crate) fn axis_diff(values: &[f64], grid: &GridSpec, axis: usize) -> Vec<f64> {
    let [h, w, d] = grid.dims();
    let n = [h, w, d][axis];
    let stride = match axis {
        0 => w * d,
        1 => d,
        _ => 1,
    };
    let mut out = vec![0.0; values.len()];
    for (idx, c) in grid.iter_coords().enumerate() {
        let pos = c[axis];
        out[idx] = if pos == 0 {
            values[idx + stride] - values[idx]
        } else if pos == n - 1 {
            values[idx] - values[idx - stride]
        } else {
            (values[idx + stride] - values[idx - stride]) / 2.0
        };
    }
    out
}

/// Exact adjoint of [`axis_diff`] under the unweighted voxel inner product:
/// `<axis_diff(u), v> = <u, axis_diff_adjoint(v)>` for all `u`, `v`.
pub(crate) fn axis_diff_adjoint(values: &[f64], grid: &GridSpec, axis: usize) -> Vec<f64> {
    let [h, w, d] = grid.dims();
    let n = [h, w, d][axis];
    let stride = match axis {
        0 => w * d,
        1 => d,
        _ => 1,
    };
    let mut out = vec![0.0; values.len()];
    if n == 1 {
        return out;
    }
    for (idx, c) in grid.iter_coords().enumerate() {
        let pos = c[axis];
        // Collect every forward-operator coefficient that reads voxel `pos`.
        let mut acc = 0.0;
        // Face rows: row 0 contributes -1 to pos 0 and +1 to pos 1;
        // row n-1 contributes +1 to pos n-1 and -1 to pos n-2.
        if pos == 0 {
            acc -= values[idx];
        }
        if pos == 1 {
            acc += values[idx - stride];
        }
        if pos == n - 1 {
            acc += values[idx];
        }
        if n >= 2 && pos == n - 2 {
            acc -= values[idx + stride];
        }
        // Interior rows p in 1..n-1 contribute +1/2 at p+1 and -1/2 at p-1.
        if pos >= 2 {
            acc += values[idx - stride] / 2.0;
        }
        if pos + 2 <= n - 1 {
            acc -= values[idx + stride] / 2.0;
        }
        out[idx] = acc;
    }
    out
}
