//! Operations on fitted transport maps: inversion, density transport along
//! the map, and displacement geodesics.

use crate::grid::{DensityVolume, ScalarGrid, VectorField};
use crate::{Error, Result};

/// Inverse map with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct InvertResult {
    /// `g ~= f^{-1}`, same grid and coordinate convention as the input.
    pub field: VectorField,
    /// Fixed-point iterations performed.
    pub iterations: usize,
    /// Largest displacement change in the final iteration (voxels).
    pub max_update: f64,
    /// Per-voxel composition error `|f(g(x)) - x|`.
    pub residual: ScalarGrid,
    /// Largest composition error over the grid (voxels).
    pub max_residual: f64,
    /// Whether the fixed point met `tol` within the iteration budget.
    pub converged: bool,
}

/// Invert `f` by displacement fixed-point iteration:
/// `v_{k+1}(x) = -u(x + v_k(x))` with `u = f - Id`, starting from `v_0 = 0`.
///
/// Converges for the modest deformations the solver produces (contractive
/// while `|Du| < 1`). Non-convergence is not an error; inspect
/// [`InvertResult::converged`] and the residual field.
pub fn invert_field(f: &VectorField, tol: f64, max_iters: usize) -> Result<InvertResult> {
    if tol <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: "must be positive".into(),
        });
    }
    if max_iters == 0 {
        return Err(Error::InvalidParameter {
            name: "max_iters",
            reason: "must be at least 1".into(),
        });
    }
    let grid = f.grid();
    let n = grid.len();

    // Displacement u = f - Id, stored as components for fast sampling.
    let mut u = f.clone();
    for (idx, c) in grid.iter_coords().enumerate() {
        for axis in 0..3 {
            u.component_mut(axis)[idx] -= c[axis] as f64;
        }
    }

    let mut v = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut max_update = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        max_update = 0.0f64;
        let mut next = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (idx, c) in grid.iter_coords().enumerate() {
            let p = [
                c[0] as f64 + v[0][idx],
                c[1] as f64 + v[1][idx],
                c[2] as f64 + v[2][idx],
            ];
            let uv = u.sample(p);
            for axis in 0..3 {
                let nv = -uv[axis];
                max_update = max_update.max((nv - v[axis][idx]).abs());
                next[axis][idx] = nv;
            }
        }
        v = next;
        if max_update < tol {
            break;
        }
    }

    let mut g = VectorField::identity(grid);
    for axis in 0..3 {
        for (gv, dv) in g.component_mut(axis).iter_mut().zip(&v[axis]) {
            *gv += dv;
        }
    }

    let mut residual = vec![0.0; n];
    let mut max_residual = 0.0f64;
    for (idx, c) in grid.iter_coords().enumerate() {
        let fg = f.sample(g.at(idx));
        let r = ((fg[0] - c[0] as f64).powi(2)
            + (fg[1] - c[1] as f64).powi(2)
            + (fg[2] - c[2] as f64).powi(2))
        .sqrt();
        residual[idx] = r;
        max_residual = max_residual.max(r);
    }

    Ok(InvertResult {
        field: g,
        iterations,
        max_update,
        residual: ScalarGrid::new(grid, residual)?,
        max_residual,
        converged: max_update < tol,
    })
}

/// Transport `reference` forward through a map given its inverse:
/// `I(x) = max(0, det(Dg)(x)) * reference(g(x))`, renormalized to unit mass.
///
/// Negative determinants (local folds) would create negative density, so
/// they are clipped; heavy clipping shows up as lost mass before the
/// renormalization and as a poor reconstruction.
pub fn pushforward(reference: &DensityVolume, inverse_map: &VectorField) -> Result<DensityVolume> {
    transport_density(reference, inverse_map)
}

/// Transport `target` backward through `map`:
/// `J(x) = max(0, det(Dmap)(x)) * target(map(x))`, renormalized. For a
/// mass-preserving map fitted from a reference onto `target`, the pullback
/// approximates that reference.
pub fn pullback(target: &DensityVolume, map: &VectorField) -> Result<DensityVolume> {
    transport_density(target, map)
}

fn transport_density(density: &DensityVolume, map: &VectorField) -> Result<DensityVolume> {
    if density.grid() != map.grid() {
        return Err(Error::grid_mismatch(density.grid(), map.grid()));
    }
    let det = map.jacobian_determinant()?;
    let grid = map.grid();
    let mut vals = vec![0.0; grid.len()];
    for (idx, v) in vals.iter_mut().enumerate() {
        let d = det.values()[idx].max(0.0);
        if d > 0.0 {
            *v = d * density.sample(map.at(idx));
        }
    }
    DensityVolume::new(grid, vals)?.normalize_mass(0.0)
}

/// Displacement interpolation of the map: `(1 - alpha) Id + alpha f`.
/// `alpha` outside `[0, 1]` extrapolates (allowed, logged).
pub fn geodesic_map(f: &VectorField, alpha: f64) -> VectorField {
    f.blend_with_identity(alpha)
}

/// Density along the displacement geodesic parameterized so `alpha = 0` is
/// the target and `alpha = 1` reconstructs the reference: the pullback of
/// `target` through the partial map. `alpha = 0` returns the target
/// unchanged (exactly, no resampling round-trip).
pub fn geodesic_density(
    target: &DensityVolume,
    f: &VectorField,
    alpha: f64,
) -> Result<DensityVolume> {
    if target.grid() != f.grid() {
        return Err(Error::grid_mismatch(target.grid(), f.grid()));
    }
    if alpha == 0.0 {
        return Ok(target.clone());
    }
    pullback(target, &geodesic_map(f, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::assert_abs_diff_eq;

    /// A smooth synthetic deformation: identity plus a sine bump, small
    /// enough to be diffeomorphic on the grid.
    fn wavy_map(grid: GridSpec, amp: f64) -> VectorField {
        let [h, w, d] = grid.dims();
        let mut f = VectorField::identity(grid);
        for (idx, c) in grid.iter_coords().enumerate() {
            let sx = (std::f64::consts::PI * c[0] as f64 / (h - 1) as f64).sin();
            let sy = (std::f64::consts::PI * c[1] as f64 / (w - 1) as f64).sin();
            let sz = (std::f64::consts::PI * c[2] as f64 / (d - 1) as f64).sin();
            f.component_mut(0)[idx] += amp * sx * sy;
            f.component_mut(1)[idx] += amp * sy * sz;
            f.component_mut(2)[idx] += 0.5 * amp * sz * sx;
        }
        f
    }

    #[test]
    fn inversion_round_trips_a_smooth_map() {
        let grid = GridSpec::new(12, 12, 12).unwrap();
        let f = wavy_map(grid, 1.2);
        let inv = invert_field(&f, 1e-4, 100).unwrap();
        assert!(inv.converged);
        // Composition error, excluding voxels the map pushes off-grid where
        // clamped sampling cannot represent the composition.
        let mut worst = 0.0f64;
        for (idx, c) in grid.iter_coords().enumerate() {
            let g = inv.field.at(idx);
            let inside = (0..3).all(|a| g[a] >= 0.0 && g[a] <= (grid.dims()[a] - 1) as f64);
            if inside {
                let fg = f.sample(g);
                let e = ((fg[0] - c[0] as f64).powi(2)
                    + (fg[1] - c[1] as f64).powi(2)
                    + (fg[2] - c[2] as f64).powi(2))
                .sqrt();
                worst = worst.max(e);
            }
        }
        assert!(worst < 1e-3, "composition error {worst}");
    }

    #[test]
    fn inverting_identity_is_identity() {
        let grid = GridSpec::new(6, 6, 6).unwrap();
        let id = VectorField::identity(grid);
        let inv = invert_field(&id, 1e-6, 10).unwrap();
        assert!(inv.converged);
        assert_eq!(inv.field, id);
        assert_eq!(inv.max_residual, 0.0);
    }

    #[test]
    fn pullback_through_identity_renormalizes_only() {
        let grid = GridSpec::new(6, 6, 6).unwrap();
        let v = DensityVolume::uniform(grid, 1.0).unwrap();
        let id = VectorField::identity(grid);
        let out = pullback(&v, &id).unwrap();
        for (a, b) in out.values().iter().zip(v.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_density_stays_uniform_under_pullback_of_a_shift() {
        // With clamped sampling, a constant shift of a uniform density keeps
        // it uniform: unit Jacobian, and off-grid reads clamp to the same
        // constant value.
        let grid = GridSpec::new(8, 8, 8).unwrap();
        let v = DensityVolume::uniform(grid, 1.0).unwrap();
        let mut f = VectorField::identity(grid);
        for x in f.component_mut(2) {
            *x += 2.0;
        }
        let out = pullback(&v, &f).unwrap();
        for &x in out.values() {
            assert_abs_diff_eq!(x, 1.0 / grid.len() as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn expansive_map_concentrates_the_pullback() {
        // f(x) = center + 2 (x - center) reads the target twice as far out,
        // so the pulled-back density is the original shrunk toward the
        // center and must have a smaller second moment.
        let grid = GridSpec::new(16, 16, 16).unwrap();
        let center = 7.5;
        let vals: Vec<f64> = grid
            .iter_coords()
            .map(|c| {
                let dx = c[0] as f64 - center;
                let dy = c[1] as f64 - center;
                let dz = c[2] as f64 - center;
                (-(dx * dx + dy * dy + dz * dz) / 8.0).exp()
            })
            .collect();
        let target = DensityVolume::new(grid, vals).unwrap().normalize_mass(0.0).unwrap();
        let mut f = VectorField::identity(grid);
        for axis in 0..3 {
            for (idx, c) in grid.iter_coords().enumerate() {
                f.component_mut(axis)[idx] = center + 2.0 * (c[axis] as f64 - center);
            }
        }
        let out = pullback(&target, &f).unwrap();
        assert!(out.is_mass_normalized());
        assert!(
            out.second_moment() < 0.4 * target.second_moment(),
            "pullback did not concentrate: {} vs {}",
            out.second_moment(),
            target.second_moment()
        );
    }

    #[test]
    fn geodesic_endpoints_behave() {
        let grid = GridSpec::new(10, 10, 10).unwrap();
        let f = wavy_map(grid, 0.8);
        let vals: Vec<f64> = (0..grid.len()).map(|i| 1.0 + (i % 7) as f64).collect();
        let target = DensityVolume::new(grid, vals).unwrap().normalize_mass(0.0).unwrap();

        // alpha = 0 is the exact same data, not a resampled copy.
        let rho0 = geodesic_density(&target, &f, 0.0).unwrap();
        assert_eq!(rho0.values(), target.values());

        // alpha = 1 equals the full pullback.
        let rho1 = geodesic_density(&target, &f, 1.0).unwrap();
        let full = pullback(&target, &f).unwrap();
        assert_eq!(rho1.values(), full.values());

        // Intermediate alphas stay normalized.
        let mid = geodesic_density(&target, &f, 0.5).unwrap();
        assert!(mid.is_mass_normalized());
    }

    #[test]
    fn invert_field_validates_parameters() {
        let grid = GridSpec::new(4, 4, 4).unwrap();
        let id = VectorField::identity(grid);
        assert!(invert_field(&id, 0.0, 10).is_err());
        assert!(invert_field(&id, 1e-3, 0).is_err());
    }
}
