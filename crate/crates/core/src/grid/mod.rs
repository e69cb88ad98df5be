//! Regular 3D voxel grids and the densities and vector fields living on them.
//!
//! Conventions used throughout the crate:
//!
//! * Dimensions are `(h, w, d)` and voxel `(i, j, k)` sits at coordinate
//!   `(i as f64, j as f64, k as f64)` with unit spacing.
//! * Flat storage is C-order: index `(i * w + j) * d + k`.
//! * Resampling between grids identifies the *extents* of the two grids
//!   (voxels are unit cells), so fine coordinate `x_f` corresponds to coarse
//!   coordinate `x_c` with `x_f = s * x_c + (s - 1) / 2`, `s = n_f / n_c`
//!   per axis.

mod field;
mod interp;
mod resample;
mod volume;

pub use field::{ScalarGrid, VectorField};
pub(crate) use field::axis_diff_adjoint;
pub use interp::{trilinear, trilinear_with_grad};
pub(crate) use interp::trilinear_zero_with_grad;
pub use resample::resample_values;
pub use volume::DensityVolume;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dimensions of a regular voxel grid with unit spacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    dims: [usize; 3],
}

impl GridSpec {
    /// A grid with `h * w * d` voxels. Every axis must be at least 1;
    /// operations that differentiate (Jacobians, the transport solver)
    /// additionally require at least 2 voxels per axis and say so in their
    /// own contracts.
    pub fn new(h: usize, w: usize, d: usize) -> Result<Self> {
        if h == 0 || w == 0 || d == 0 {
            return Err(Error::InvalidParameter {
                name: "dims",
                reason: format!("every axis must be positive, got {h}x{w}x{d}"),
            });
        }
        Ok(GridSpec { dims: [h, w, d] })
    }

    /// A cube grid, `n` voxels per side.
    pub fn cube(n: usize) -> Result<Self> {
        GridSpec::new(n, n, n)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Total voxel count.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat C-order index of voxel `(i, j, k)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    /// Voxel `(i, j, k)` of flat index `idx`.
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let d = self.dims[2];
        let w = self.dims[1];
        let k = idx % d;
        let j = (idx / d) % w;
        let i = idx / (d * w);
        [i, j, k]
    }

    /// True when every axis has at least 2 voxels, i.e. finite differences
    /// are defined.
    pub fn supports_gradients(&self) -> bool {
        self.dims.iter().all(|&n| n >= 2)
    }

    /// Error unless [`Self::supports_gradients`] holds.
    pub fn require_gradients(&self, op: &'static str) -> Result<()> {
        if self.supports_gradients() {
            Ok(())
        } else {
            Err(Error::GridTooSmall {
                dims: self.to_string(),
                op,
            })
        }
    }

    /// Geometric center of the grid in voxel coordinates.
    pub fn center(&self) -> [f64; 3] {
        [
            (self.dims[0] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[2] as f64 - 1.0) / 2.0,
        ]
    }

    /// Iterate over all voxel coordinates in flat-index order.
    pub fn iter_coords(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [h, w, d] = self.dims;
        (0..h).flat_map(move |i| (0..w).flat_map(move |j| (0..d).map(move |k| [i, j, k])))
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.dims[0], self.dims[1], self.dims[2])
    }
}
