//! Transport-based morphometry for 3D volumetric images.
//!
//! The pipeline runs in four stages, each usable on its own:
//!
//! 1. [`grid`] holds densities and vector fields on regular voxel grids,
//!    with `.npy` interchange in [`npy`].
//! 2. [`solver`] computes mass-preserving transport maps between a common
//!    reference density and each subject volume, plus the inverse-map,
//!    pushforward, geodesic, and intrinsic-mean operations built on them.
//! 3. [`embedding`] turns a cohort of volumes into a linear optimal
//!    transport feature matrix (one row per subject) with content-addressed
//!    caching of the expensive solves.
//! 4. [`stats`] and [`viz`] fit PCA / PLDA / CCA / nearest-subspace models
//!    on those features and render the fitted directions back into image
//!    space as synthetic volumes and slice figures.

pub mod embedding;
mod error;
pub mod grid;
pub mod npy;
pub mod solver;
pub mod stats;
pub mod synth;
pub mod viz;

pub use error::{Error, Result};
