//! Intrinsic (transport) mean of a population of maps.

use super::{invert_field, pushforward, solve_monge, SolverConfig};
use crate::grid::{DensityVolume, VectorField};
use crate::{Error, Result};

/// Average a population in transport space: take the pointwise mean of the
/// subject maps, invert it, and push the reference through the inverse.
///
/// `maps` must all come from solves against `reference` (same grid, same
/// direction). With `iters = 1` this is the single-shot barycenter estimate.
/// With `iters > 1` each extra round reconstructs the subjects from their
/// maps, re-solves them against the current mean, and averages again, which
/// tightens the estimate when the population spread is large.
pub fn intrinsic_mean(
    maps: &[VectorField],
    reference: &DensityVolume,
    iters: usize,
    cfg: &SolverConfig,
) -> Result<DensityVolume> {
    if maps.is_empty() {
        return Err(Error::EmptyInput { what: "maps" });
    }
    if iters == 0 {
        return Err(Error::InvalidParameter {
            name: "iters",
            reason: "must be at least 1".into(),
        });
    }
    for m in maps {
        if m.grid() != reference.grid() {
            return Err(Error::grid_mismatch(reference.grid(), m.grid()));
        }
    }
    cfg.validate()?;

    let mean_density = |maps: &[VectorField], reference: &DensityVolume| -> Result<DensityVolume> {
        let mean_map = VectorField::mean_of(maps)?;
        let inv = invert_field(&mean_map, cfg.invert_tol, cfg.invert_max_iters)?;
        if !inv.converged {
            log::warn!(
                "mean-map inversion stopped at update {:.2e} after {} iterations",
                inv.max_update,
                inv.iterations
            );
        }
        pushforward(reference, &inv.field)
    };

    let mut mean = mean_density(maps, reference)?;
    if iters == 1 {
        return Ok(mean);
    }

    // Reconstruct each subject once from its map; later rounds re-solve
    // these against the evolving mean.
    let mut targets = Vec::with_capacity(maps.len());
    for m in maps {
        let inv = invert_field(m, cfg.invert_tol, cfg.invert_max_iters)?;
        targets.push(pushforward(reference, &inv.field)?);
    }

    for round in 1..iters {
        let mut new_maps = Vec::with_capacity(targets.len());
        for t in &targets {
            let sol = solve_monge(&mean, t, cfg)?;
            if !sol.converged {
                log::warn!(
                    "round {round}: re-solve residual {:.3e} above tolerance",
                    sol.mp_residual
                );
            }
            new_maps.push(sol.map);
        }
        mean = mean_density(&new_maps, &mean)?;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn gaussian(grid: GridSpec, center: [f64; 3], sigma: f64) -> DensityVolume {
        let vals: Vec<f64> = grid
            .iter_coords()
            .map(|c| {
                let dx = c[0] as f64 - center[0];
                let dy = c[1] as f64 - center[1];
                let dz = c[2] as f64 - center[2];
                (-(dx * dx + dy * dy + dz * dz) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        DensityVolume::new(grid, vals)
            .unwrap()
            .normalize_mass(1e-8)
            .unwrap()
    }

    #[test]
    fn mean_of_identical_maps_reproduces_their_target() {
        let grid = GridSpec::new(12, 12, 12).unwrap();
        let reference = gaussian(grid, [5.5, 5.5, 5.5], 2.0);
        let target = gaussian(grid, [6.5, 5.5, 5.5], 2.0);
        let cfg = SolverConfig::default();
        let sol = solve_monge(&reference, &target, &cfg).unwrap();
        let maps = vec![sol.map.clone(), sol.map.clone()];
        let mean = intrinsic_mean(&maps, &reference, 1, &cfg).unwrap();
        // The mean map equals the single map, so the mean density is the
        // map's own reconstruction of the target.
        let direct = pushforward(
            &reference,
            &invert_field(&sol.map, cfg.invert_tol, cfg.invert_max_iters)
                .unwrap()
                .field,
        )
        .unwrap();
        assert_eq!(mean.values(), direct.values());
        assert!(mean.l1_distance(&target).unwrap() < 0.1);
    }

    #[test]
    fn rejects_empty_and_mismatched_inputs() {
        let grid = GridSpec::new(8, 8, 8).unwrap();
        let reference = gaussian(grid, [3.5, 3.5, 3.5], 1.5);
        let cfg = SolverConfig::default();
        assert!(matches!(
            intrinsic_mean(&[], &reference, 1, &cfg),
            Err(Error::EmptyInput { .. })
        ));
        let other = VectorField::identity(GridSpec::new(4, 4, 4).unwrap());
        assert!(matches!(
            intrinsic_mean(&[other], &reference, 1, &cfg),
            Err(Error::GridMismatch { .. })
        ));
        let id = VectorField::identity(grid);
        assert!(intrinsic_mean(&[id], &reference, 0, &cfg).is_err());
    }
}
