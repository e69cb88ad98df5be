//! Mass-preserving transport between densities on the same grid.
//!
//! [`solve_monge`] minimizes a quadratic transport cost subject to a
//! quadratic mass-preservation penalty, coarse-to-fine over a grid pyramid,
//! with accelerated gradient descent and backtracking inside each penalty
//! round. The surrounding operations ([`invert_field`], [`pushforward`],
//! [`pullback`], [`geodesic_density`], [`intrinsic_mean`]) turn the fitted
//! maps back into volumes.

mod energy;
mod mean;
mod ops;
mod optimize;

pub use energy::{mp_residual, transport_cost};
pub use mean::intrinsic_mean;
pub use ops::{geodesic_density, geodesic_map, invert_field, pullback, pushforward, InvertResult};
pub use optimize::solve_monge;

use serde::{Deserialize, Serialize};

use crate::grid::VectorField;
use crate::{Error, Result};

/// Solver knobs. The defaults solve typical 32 to 64 voxel volumes to a
/// relative mass-preservation residual well under `tau_mp`; serialization is
/// stable because the cache key hashes this struct as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Pyramid depth; level `l` halves each axis `l` times (floor of 2).
    pub levels: usize,
    /// Gradient iteration budget per pyramid level, shared by the penalty
    /// continuation rounds at that level.
    pub max_iters: usize,
    /// Penalty weight for the first continuation round.
    pub lambda_init: f64,
    /// Multiplier applied to the penalty weight between rounds.
    pub lambda_scale: f64,
    /// Number of continuation rounds per level.
    pub lambda_rounds: usize,
    /// Acceptable relative mass-preservation residual; also the convergence
    /// flag's threshold.
    pub tau_mp: f64,
    /// Continuation stops raising the penalty weight once the residual sits
    /// at or below this value; zero keeps the full schedule. Useful when the
    /// discrete balance equation is much looser than the continuum one and
    /// over-tightening would trade map fidelity for meaningless residual.
    pub res_target: f64,
    /// Gaussian blur (in level-local voxels) applied to the gradient before
    /// each update; keeps maps smooth and invertible in practice.
    pub smooth_sigma: f64,
    /// Iteration budget for the polish phase after the continuation rounds
    /// at the finest level: curvature-scaled, momentum-free steps that
    /// converge the stiff high-density voxels blurred global steps cannot.
    /// Zero disables polishing.
    pub polish_iters: usize,
    /// Gradient blur during the polish phase.
    pub polish_sigma: f64,
    /// First trial update moves the fastest voxel this far (in voxels); the
    /// line search calibrates the actual step from it.
    pub initial_update: f64,
    /// Step growth factor after an accepted first-try iteration.
    pub step_grow: f64,
    /// Step shrink factor when backtracking.
    pub step_shrink: f64,
    /// Relative objective decrease below which an iteration counts as a
    /// stall; `stall_window` consecutive stalls end the round.
    pub tol_rel: f64,
    pub stall_window: usize,
    /// Fixed-point tolerance (voxels) for map inversion.
    pub invert_tol: f64,
    pub invert_max_iters: usize,
    /// Start from a separable moment-matching map (center-of-mass shift plus
    /// per-axis scaling) instead of the identity. Recovers large bulk
    /// displacements that per-voxel gradient forces cannot reach out in the
    /// density tails.
    pub moment_init: bool,
    /// After each level, relax displacements in voxels carrying less than
    /// `tail_trust` of the peak reference density toward the smooth
    /// extension of the trusted bulk motion. Out there the objective is too
    /// flat to determine the map numerically; the extension picks the smooth
    /// completion instead of whatever the gradient flow drifted to. Set to 0
    /// to disable.
    pub tail_trust: f64,
    /// Gaussian width (voxels) of one tail-extension smoothing pass.
    pub tail_sigma: f64,
    /// Number of tail-extension passes per level.
    pub tail_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            levels: 3,
            max_iters: 300,
            lambda_init: 1e4,
            lambda_scale: 10.0,
            lambda_rounds: 3,
            tau_mp: 5e-2,
            res_target: 0.0,
            smooth_sigma: 1.0,
            polish_iters: 100,
            polish_sigma: 0.0,
            initial_update: 0.25,
            step_grow: 1.3,
            step_shrink: 0.5,
            tol_rel: 1e-8,
            stall_window: 8,
            invert_tol: 1e-3,
            invert_max_iters: 50,
            moment_init: true,
            tail_trust: 1e-2,
            tail_sigma: 2.0,
            tail_iters: 40,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if self.levels == 0 {
            return bad("levels", "must be at least 1");
        }
        if self.max_iters == 0 {
            return bad("max_iters", "must be at least 1");
        }
        if self.lambda_init <= 0.0 || !self.lambda_init.is_finite() {
            return bad("lambda_init", "must be positive and finite");
        }
        if self.lambda_scale < 1.0 {
            return bad("lambda_scale", "must be at least 1");
        }
        if self.lambda_rounds == 0 {
            return bad("lambda_rounds", "must be at least 1");
        }
        if self.tau_mp <= 0.0 {
            return bad("tau_mp", "must be positive");
        }
        if self.res_target < 0.0 || !self.res_target.is_finite() {
            return bad("res_target", "must be non-negative and finite");
        }
        if !(0.0..=1e3).contains(&self.smooth_sigma) {
            return bad("smooth_sigma", "must be in [0, 1000]");
        }
        if !(0.0..=1e3).contains(&self.polish_sigma) {
            return bad("polish_sigma", "must be in [0, 1000]");
        }
        if self.initial_update <= 0.0 {
            return bad("initial_update", "must be positive");
        }
        if self.step_grow <= 1.0 {
            return bad("step_grow", "must be greater than 1");
        }
        if !(0.0..1.0).contains(&self.step_shrink) || self.step_shrink <= 0.0 {
            return bad("step_shrink", "must be in (0, 1)");
        }
        if self.invert_tol <= 0.0 {
            return bad("invert_tol", "must be positive");
        }
        if !(0.0..1.0).contains(&self.tail_trust) {
            return bad("tail_trust", "must be in [0, 1)");
        }
        if self.tail_trust > 0.0 && self.tail_sigma <= 0.0 {
            return bad("tail_sigma", "must be positive when tail_trust is set");
        }
        if self.invert_max_iters == 0 {
            return bad("invert_max_iters", "must be at least 1");
        }
        Ok(())
    }
}

/// Result of a transport solve.
#[derive(Debug, Clone)]
pub struct MongeSolution {
    /// Fitted map `f` with `det(Df) * It(f(x)) ~= I0(x)`, pushing the
    /// reference onto the target.
    pub map: VectorField,
    /// `sum_x I0(x) |x - f(x)|^2` at the finest level.
    pub transport_cost: f64,
    /// Relative mass-preservation residual at the finest level.
    pub mp_residual: f64,
    /// Accepted gradient iterations per pyramid level, coarsest first.
    pub iterations_per_level: Vec<usize>,
    /// Whether `mp_residual <= tau_mp`.
    pub converged: bool,
}
