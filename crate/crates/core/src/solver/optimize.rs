//! Coarse-to-fine minimization of the penalized transport objective.

use super::energy::{energy, energy_grad, mp_residual, smooth_components, transport_cost};
use super::{MongeSolution, SolverConfig};
use crate::grid::{DensityVolume, GridSpec, VectorField};
use crate::{Error, Result};

/// Solve for a mass-preserving map from `reference` onto `target`.
///
/// Both densities must share a grid with at least 2 voxels per axis, be
/// mass-normalized, and be strictly positive (run
/// [`DensityVolume::normalize_mass`] with a small floor first; zeros make
/// the mass-preservation constraint unsatisfiable wherever mass must appear
/// from nothing).
///
/// The returned map is not guaranteed to hit `tau_mp`; check
/// [`MongeSolution::converged`] or the residual itself. Determinism: the
/// solve is single-threaded and allocation-order stable, so identical inputs
/// produce bit-identical maps.
pub fn solve_monge(
    reference: &DensityVolume,
    target: &DensityVolume,
    cfg: &SolverConfig,
) -> Result<MongeSolution> {
    cfg.validate()?;
    if reference.grid() != target.grid() {
        return Err(Error::grid_mismatch(reference.grid(), target.grid()));
    }
    reference.grid().require_gradients("solve_monge")?;
    for (vol, name) in [(reference, "reference"), (target, "target")] {
        if !vol.is_mass_normalized() {
            return Err(Error::NotNormalized { sum: vol.sum() });
        }
        if let Some(idx) = vol.values().iter().position(|&v| v <= 0.0) {
            log::error!("{name} density has a non-positive voxel at {idx}");
            return Err(Error::NonPositiveDensity { index: idx });
        }
    }

    let specs = pyramid_specs(reference.grid(), cfg.levels);
    let mut f = if cfg.moment_init {
        moment_init(
            &reference.resample(specs[0])?,
            &target.resample(specs[0])?,
        )
    } else {
        VectorField::identity(specs[0])
    };
    let mut iterations_per_level = Vec::with_capacity(specs.len());

    for (li, &spec) in specs.iter().enumerate() {
        let i0 = reference.resample(spec)?;
        let it = target.resample(spec)?;
        if f.grid() != spec {
            f = f.resample(spec)?;
        }
        let iters = run_level(&mut f, &i0, &it, li, specs.len(), cfg);
        extend_tail(&mut f, &i0, cfg);
        iterations_per_level.push(iters);
        log::debug!(
            "level {li} ({spec}): {iters} iterations, residual {:.3e}",
            mp_residual(&f, &i0, &it)
        );
    }

    let residual = mp_residual(&f, reference, target);
    Ok(MongeSolution {
        transport_cost: transport_cost(&f, reference),
        mp_residual: residual,
        converged: residual <= cfg.tau_mp,
        iterations_per_level,
        map: f,
    })
}

/// Separable moment-matching initial map: align centers of mass and per-axis
/// standard deviations, `f_i(x) = com1_i + s_i (x_i - com0_i)` with
/// `s_i = std1_i / std0_i`. For axis-aligned Gaussian pairs this is already
/// the optimal transport map; in general it hands the optimizer a map whose
/// bulk motion is right, which matters because gradient forces far out in
/// the density tails are too weak to recover large displacements there.
fn moment_init(i0: &DensityVolume, it: &DensityVolume) -> VectorField {
    let grid = i0.grid();
    let com0 = i0.center_of_mass();
    let com1 = it.center_of_mass();
    let var = |v: &DensityVolume, com: [f64; 3]| -> [f64; 3] {
        let total = v.sum();
        let mut acc = [0.0; 3];
        for (idx, c) in v.grid().iter_coords().enumerate() {
            let w = v.values()[idx];
            for axis in 0..3 {
                let d = c[axis] as f64 - com[axis];
                acc[axis] += w * d * d;
            }
        }
        for a in &mut acc {
            *a /= total;
        }
        acc
    };
    let v0 = var(i0, com0);
    let v1 = var(it, com1);
    let mut scale = [1.0; 3];
    for axis in 0..3 {
        if v0[axis] > 1e-12 && v1[axis] > 1e-12 {
            scale[axis] = (v1[axis] / v0[axis]).sqrt();
        }
    }
    let mut f = VectorField::identity(grid);
    for axis in 0..3 {
        for (idx, c) in grid.iter_coords().enumerate() {
            f.component_mut(axis)[idx] = com1[axis] + scale[axis] * (c[axis] as f64 - com0[axis]);
        }
    }
    f
}

/// Relax tail displacements toward the smooth extension of the bulk motion.
///
/// Voxels with `I0 >= tail_trust * max(I0)` keep their optimized
/// displacement; the weight ramps linearly to zero below that, where each
/// pass replaces the displacement with its Gaussian blend. Iterating a
/// contraction of this form converges to a harmonic-like extension of the
/// trusted values, which is the natural completion of a map the objective
/// no longer constrains.
fn extend_tail(f: &mut VectorField, i0: &DensityVolume, cfg: &SolverConfig) {
    if cfg.tail_trust <= 0.0 || cfg.tail_iters == 0 {
        return;
    }
    let peak = i0.max();
    if peak <= 0.0 {
        return;
    }
    let grid = f.grid();
    let trust = cfg.tail_trust * peak;
    let w: Vec<f64> = i0.values().iter().map(|v| (v / trust).min(1.0)).collect();
    if w.iter().all(|&x| x >= 1.0) {
        return;
    }
    let mut u: [Vec<f64>; 3] = Default::default();
    for (axis, comp) in u.iter_mut().enumerate() {
        *comp = f.component(axis).to_vec();
        for (idx, c) in grid.iter_coords().enumerate() {
            comp[idx] -= c[axis] as f64;
        }
    }
    for _ in 0..cfg.tail_iters {
        let mut s = u.clone();
        smooth_components(&mut s, &grid, cfg.tail_sigma);
        for axis in 0..3 {
            for ((uv, sv), wv) in u[axis].iter_mut().zip(&s[axis]).zip(&w) {
                *uv = wv * *uv + (1.0 - wv) * sv;
            }
        }
    }
    for (axis, comp) in u.iter().enumerate() {
        for (idx, c) in grid.iter_coords().enumerate() {
            f.component_mut(axis)[idx] = c[axis] as f64 + comp[idx];
        }
    }
}

/// Grid sizes from coarsest to finest. Level `l` has `max(2, ceil(n / 2^l))`
/// voxels per axis; levels that no longer shrink are dropped.
fn pyramid_specs(finest: GridSpec, levels: usize) -> Vec<GridSpec> {
    let [h, w, d] = finest.dims();
    // Cap the depth so the longest axis keeps at least six voxels at the
    // coarsest level; below that, downsampled densities degenerate into
    // near-deltas and the coarse solve misleads the finer ones.
    let max_dim = h.max(w).max(d);
    let levels = if max_dim < 6 {
        1
    } else {
        levels.clamp(1, 1 + (max_dim / 6).ilog2() as usize)
    };
    let mut specs = Vec::new();
    for l in (0..levels).rev() {
        let shrink = |n: usize| ((n + (1 << l) - 1) >> l).max(2);
        let spec = GridSpec::new(shrink(h), shrink(w), shrink(d)).expect("axes stay positive");
        if specs.last() != Some(&spec) {
            specs.push(spec);
        }
    }
    specs
}

/// Penalty continuation at one pyramid level. The weight starts at
/// `lambda_init * lambda_scale^level` and multiplies by `lambda_scale` each
/// round until it reaches the same final stiffness on every level: coarse
/// levels run their soft structure-forming rounds and then re-converge
/// stiffly while iterations are cheap, so the continuation bias (soft rounds
/// trade a little displacement everywhere for residual) is corrected at the
/// scale where it lives instead of being inherited by the expensive fine
/// grid. Each level ends with an affine refit and a Jacobi polish at the
/// final weight. Returns accepted iterations.
fn run_level(
    f: &mut VectorField,
    i0: &DensityVolume,
    it: &DensityVolume,
    level: usize,
    levels_total: usize,
    cfg: &SolverConfig,
) -> usize {
    let inv_i0_sq = 1.0 / i0.values().iter().map(|v| v * v).sum::<f64>();
    let rounds = cfg.lambda_rounds + (levels_total - 1 - level);
    let per_round = cfg.max_iters.div_ceil(rounds);
    let mut lambda = cfg.lambda_init * cfg.lambda_scale.powi(level as i32);
    let mut used = 0;
    for round in 0..rounds {
        if used >= cfg.max_iters {
            break;
        }
        let budget = per_round.min(cfg.max_iters - used);
        let spent = minimize_round(
            f, i0, it, lambda, inv_i0_sq, cfg.smooth_sigma, false, budget, cfg,
        );
        used += spent;
        let res = mp_residual(f, i0, it);
        if log::log_enabled!(log::Level::Trace) {
            let e = energy(f, i0, it, lambda, inv_i0_sq);
            log::trace!(
                "  round {round} (lambda {lambda:.1}): {spent} iters, residual {res:.3e}, \
                 cost {:.3e} + penalty {:.3e}",
                e.cost,
                e.penalty
            );
        }
        // Continuation stops stiffening once the constraint is met with
        // margin: the discrete balance equation has exact solutions that
        // drift from the continuum map at coarse resolution, so pushing the
        // residual far below tolerance trades map fidelity for nothing.
        if round + 1 < rounds && res > cfg.res_target {
            lambda *= cfg.lambda_scale;
        }
    }
    let lam = lambda;
    // Local steps cannot retrace coordinated global motion at a stiff
    // weight; refit the affine part directly.
    used += affine_refine(f, i0, it, lam, inv_i0_sq, 30);
    if cfg.polish_iters > 0 {
        // Jacobi polish: curvature-scaled, unsmoothed, momentum-free steps
        // converge the stiff high-density voxels that blurred global steps
        // cannot, now that the map's structure is set.
        used += minimize_round(
            f, i0, it, lam, inv_i0_sq, cfg.polish_sigma, true, cfg.polish_iters, cfg,
        );
    }
    used
}

/// Line-searched Gauss-Newton over the affine family `f(x) + a + B(x - com)`.
///
/// Projecting the full gradient onto the 12 affine parameters and scaling by
/// the transport metric (total mass for shifts, second moments for the
/// linear part) recovers global modes in a handful of energy evaluations.
fn affine_refine(
    f: &mut VectorField,
    i0: &DensityVolume,
    it: &DensityVolume,
    lambda: f64,
    inv_i0_sq: f64,
    iters: usize,
) -> usize {
    let grid = f.grid();
    let com = i0.center_of_mass();
    let mass: f64 = i0.values().iter().sum();
    let mut mom = [0.0f64; 3];
    for (idx, c) in grid.iter_coords().enumerate() {
        let w = i0.values()[idx];
        for axis in 0..3 {
            let d = c[axis] as f64 - com[axis];
            mom[axis] += w * d * d;
        }
    }
    if mass <= 0.0 || mom.iter().any(|&m| m <= 0.0) {
        return 0;
    }

    let mut e_cur = energy(f, i0, it, lambda, inv_i0_sq).total;
    let mut step = 1.0f64;
    let mut accepted = 0;
    for _ in 0..iters {
        let (_, grad, _) = energy_grad(f, i0, it, lambda, inv_i0_sq);
        let mut da = [0.0f64; 3];
        let mut db = [[0.0f64; 3]; 3];
        for (idx, c) in grid.iter_coords().enumerate() {
            for i in 0..3 {
                let g = grad[i][idx];
                da[i] += g;
                for j in 0..3 {
                    db[i][j] += g * (c[j] as f64 - com[j]);
                }
            }
        }
        let mut slope = 0.0;
        for i in 0..3 {
            da[i] /= 2.0 * mass;
            slope += 2.0 * mass * da[i] * da[i];
            for j in 0..3 {
                db[i][j] /= 2.0 * mom[j];
                slope += 2.0 * mom[j] * db[i][j] * db[i][j];
            }
        }
        if !(slope > 1e-15 * e_cur.abs().max(1e-300)) {
            break;
        }

        let mut improved = false;
        while step.is_finite() && step > 1e-12 {
            let mut cand = f.clone();
            for i in 0..3 {
                for (idx, c) in grid.iter_coords().enumerate() {
                    let mut delta = da[i];
                    for j in 0..3 {
                        delta += db[i][j] * (c[j] as f64 - com[j]);
                    }
                    cand.component_mut(i)[idx] -= step * delta;
                }
            }
            let e_cand = energy(&cand, i0, it, lambda, inv_i0_sq).total;
            if e_cand <= e_cur - 1e-4 * step * slope {
                *f = cand;
                e_cur = e_cand;
                accepted += 1;
                step = (step * 1.5).min(4.0);
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    accepted
}

/// Monotone accelerated gradient descent at fixed penalty weight.
///
/// Standard Nesterov extrapolation with a backtracking line search on the
/// smoothed gradient direction; a trial that fails to decrease the objective
/// restarts momentum at the current iterate, so accepted objective values
/// are strictly decreasing within the round.
#[allow(clippy::too_many_arguments)]
fn minimize_round(
    f: &mut VectorField,
    i0: &DensityVolume,
    it: &DensityVolume,
    lambda: f64,
    inv_i0_sq: f64,
    sigma: f64,
    precond: bool,
    budget: usize,
    cfg: &SolverConfig,
) -> usize {
    let grid = f.grid();
    // Trust weight per voxel: the objective barely constrains the map where
    // the reference density is negligible, so smoothed-gradient leakage and
    // momentum would let those voxels drift over long runs. Scaling the
    // update keeps them anchored; the tail extension defines them afterward.
    let trust: Vec<f64> = if cfg.tail_trust > 0.0 {
        let floor = cfg.tail_trust * i0.max();
        i0.values().iter().map(|&v| (v / floor).min(1.0)).collect()
    } else {
        vec![1.0; grid.len()]
    };
    let mut f_prev = f.clone();
    let mut t_prev: f64 = 1.0;
    let mut e_cur = energy(f, i0, it, lambda, inv_i0_sq).total;
    let mut step = 0.0; // calibrated from the first gradient
    let mut accepted = 0;
    let mut stalls = 0;

    while accepted < budget {
        let t_next = if precond {
            1.0 // plain relaxation: extrapolation fights the changing metric
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt())
        };
        let beta = (t_prev - 1.0) / t_next;
        let momentum = beta > 0.0 && &f_prev != f;

        // Extrapolated point y = f + beta * (f - f_prev).
        let mut y = f.clone();
        if momentum {
            for axis in 0..3 {
                let prev = f_prev.component(axis);
                for (idx, v) in y.component_mut(axis).iter_mut().enumerate() {
                    *v += beta * (*v - prev[idx]);
                }
            }
        }

        let (e_y, grad, diag) = energy_grad(&y, i0, it, lambda, inv_i0_sq);
        let mut dir = grad.clone();
        if precond {
            // Jacobi step: gradient over curvature, in voxels. The Levenberg
            // floor keeps near-unconstrained voxels from amplifying noise.
            let floor = 1e-6
                * diag
                    .iter()
                    .flat_map(|c| c.iter())
                    .fold(0.0f64, |m, &v| m.max(v));
            for (comp, dcomp) in dir.iter_mut().zip(&diag) {
                for (v, &d) in comp.iter_mut().zip(dcomp) {
                    *v /= d + floor;
                }
            }
        }
        smooth_components(&mut dir, &grid, sigma);
        for comp in dir.iter_mut() {
            for (v, &w) in comp.iter_mut().zip(&trust) {
                *v *= w;
            }
        }
        // Directional derivative of E at y along -dir. Smoothing is positive
        // definite and the trust weights are non-negative, but their product
        // is not symmetric, so guard against the rare non-descent direction
        // by falling back to the plain weighted gradient.
        let mut slope: f64 = (0..3)
            .map(|a| grad[a].iter().zip(&dir[a]).map(|(g, s)| g * s).sum::<f64>())
            .sum();
        if slope <= 0.0 {
            for (axis, comp) in dir.iter_mut().enumerate() {
                for ((v, &g), &w) in comp.iter_mut().zip(&grad[axis]).zip(&trust) {
                    *v = g * w;
                }
            }
            slope = (0..3)
                .map(|a| grad[a].iter().zip(&dir[a]).map(|(g, s)| g * s).sum::<f64>())
                .sum();
        }
        if slope <= 0.0 || !slope.is_finite() {
            break; // flat (or numerically dead) direction: done
        }

        if step == 0.0 {
            let max_dir = dir
                .iter()
                .flat_map(|c| c.iter())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if max_dir == 0.0 {
                break;
            }
            step = cfg.initial_update / max_dir;
        }

        // Backtrack from y along the smoothed direction.
        let mut improved = false;
        let mut first_try = true;
        while step.is_finite() && step > 0.0 {
            let mut cand = y.clone();
            for axis in 0..3 {
                for (v, g) in cand.component_mut(axis).iter_mut().zip(&dir[axis]) {
                    *v -= step * g;
                }
            }
            let e_cand = energy(&cand, i0, it, lambda, inv_i0_sq).total;
            let armijo = e_cand <= e_y.total - 1e-4 * step * slope;
            if armijo && e_cand < e_cur {
                f_prev = std::mem::replace(f, cand);
                let rel = (e_cur - e_cand) / e_cur.abs().max(f64::MIN_POSITIVE);
                e_cur = e_cand;
                t_prev = t_next;
                accepted += 1;
                if first_try {
                    step *= cfg.step_grow;
                }
                improved = true;
                stalls = if rel < cfg.tol_rel { stalls + 1 } else { 0 };
                break;
            }
            first_try = false;
            step *= cfg.step_shrink;
            if step < 1e-18 / slope.max(1.0) || step < f64::MIN_POSITIVE {
                break;
            }
        }

        if !improved {
            if momentum {
                // The extrapolated point overshot; restart momentum and give
                // the line search a fresh scale.
                f_prev = f.clone();
                t_prev = 1.0;
                step = 0.0;
                continue;
            }
            break; // no decrease even from f itself
        }
        if stalls >= cfg.stall_window {
            break;
        }
    }
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::invert_field;
    use approx::assert_abs_diff_eq;

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
    fn pyramid_specs_shrink_and_deduplicate() {
        let g = GridSpec::new(32, 32, 32).unwrap();
        let specs = pyramid_specs(g, 3);
        assert_eq!(
            specs,
            vec![
                GridSpec::new(8, 8, 8).unwrap(),
                GridSpec::new(16, 16, 16).unwrap(),
                g
            ]
        );
        // Tiny grids stay single-level: halving a 4-voxel axis leaves
        // nothing for the coarse solve to work with.
        let tiny = GridSpec::new(4, 4, 4).unwrap();
        let specs = pyramid_specs(tiny, 4);
        assert_eq!(specs, vec![tiny]);
        // Depth is capped so the longest axis keeps at least six voxels.
        let mid = GridSpec::new(16, 16, 16).unwrap();
        let specs = pyramid_specs(mid, 3);
        assert_eq!(specs, vec![GridSpec::new(8, 8, 8).unwrap(), mid]);
        let skinny = GridSpec::new(32, 4, 4).unwrap();
        let specs = pyramid_specs(skinny, 3);
        assert_eq!(
            specs,
            vec![
                GridSpec::new(8, 2, 2).unwrap(),
                GridSpec::new(16, 2, 2).unwrap(),
                skinny
            ]
        );
    }

    #[test]
    fn identical_densities_solve_to_near_identity() {
        let grid = GridSpec::new(12, 12, 12).unwrap();
        let v = gaussian(grid, [5.5, 5.5, 5.5], 2.0);
        let sol = solve_monge(&v, &v.clone(), &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.mp_residual < 1e-3, "residual {}", sol.mp_residual);
        assert!(
            sol.map.max_displacement() < 0.1,
            "max displacement {}",
            sol.map.max_displacement()
        );
        assert!(sol.transport_cost < 1e-3);
    }

    #[test]
    fn small_translation_is_recovered_in_the_bulk() {
        let grid = GridSpec::new(16, 16, 16).unwrap();
        let i0 = gaussian(grid, [7.5, 7.5, 7.5], 2.0);
        let it = gaussian(grid, [9.5, 7.5, 7.5], 2.0);
        let sol = solve_monge(&i0, &it, &SolverConfig::default()).unwrap();
        assert!(sol.converged, "residual {}", sol.mp_residual);
        // Check the displacement where the reference carries real mass.
        let threshold = 0.05 * i0.max();
        let mut worst = 0.0f64;
        for (idx, &w) in i0.values().iter().enumerate() {
            if w > threshold {
                let d = sol.map.displacement_at(idx);
                let err = ((d[0] - 2.0).powi(2) + d[1].powi(2) + d[2].powi(2)).sqrt();
                worst = worst.max(err);
            }
        }
        assert!(worst < 0.35, "worst bulk map error {worst}");
        assert_abs_diff_eq!(sol.transport_cost, 4.0, epsilon = 0.8);
    }

    #[test]
    fn fitted_map_stays_invertible() {
        let grid = GridSpec::new(16, 16, 16).unwrap();
        let i0 = gaussian(grid, [7.5, 7.5, 7.5], 2.2);
        let it = gaussian(grid, [6.0, 9.0, 7.5], 1.9);
        let sol = solve_monge(&i0, &it, &SolverConfig::default()).unwrap();
        let det = sol.map.jacobian_determinant().unwrap();
        assert!(det.min() > 0.0, "Jacobian sign flipped: min {}", det.min());
        let inv = invert_field(&sol.map, 1e-3, 50).unwrap();
        assert!(inv.converged);
    }

    #[test]
    fn rejects_unnormalized_and_non_positive_inputs() {
        let grid = GridSpec::new(8, 8, 8).unwrap();
        let ok = gaussian(grid, [3.5, 3.5, 3.5], 1.5);
        let unnorm = DensityVolume::uniform(grid, 2.0).unwrap();
        assert!(matches!(
            solve_monge(&unnorm, &ok, &SolverConfig::default()),
            Err(Error::NotNormalized { .. })
        ));
        let mut vals = vec![1.0; grid.len()];
        vals[5] = 0.0;
        let zeroed = DensityVolume::new(grid, vals).unwrap().normalize_mass(0.0).unwrap();
        // normalize_mass(0.0) keeps the zero voxel, so the solver must refuse.
        assert!(matches!(
            solve_monge(&ok, &zeroed, &SolverConfig::default()),
            Err(Error::NonPositiveDensity { .. })
        ));
    }
}
