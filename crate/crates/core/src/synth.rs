//! Seeded synthetic densities: Gaussian blobs, separable slab profiles, and
//! the two-class ellipsoid phantom cohort used by the evaluation benchmark.
//!
//! Everything here is deterministic given the seed (ChaCha8 stream, no OS
//! entropy), so generated datasets are reproducible across runs, worker
//! counts, and platforms.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{DensityVolume, GridSpec};
use crate::Result;

/// Mass floor passed to [`DensityVolume::normalize_mass`] by every
/// generator; keeps the output strictly positive for the solver.
pub const NORMALIZE_EPSILON: f64 = 1e-8;

/// Deterministic RNG for synthetic data; seeded, never from OS entropy.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw in `[lo, hi)` with 53-bit resolution.
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
}

/// Standard normal draw via Box-Muller; consumes two uniforms.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = uniform(rng, f64::MIN_POSITIVE, 1.0);
    let u2 = uniform(rng, 0.0, 1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Isotropic Gaussian blob at `center`, mass-normalized with a positive
/// floor.
pub fn gaussian_blob(grid: GridSpec, center: [f64; 3], sigma: f64) -> Result<DensityVolume> {
    ellipsoid_blob(grid, center, [sigma, sigma, sigma])
}

/// Axis-aligned anisotropic Gaussian blob, mass-normalized with a positive
/// floor.
pub fn ellipsoid_blob(grid: GridSpec, center: [f64; 3], sigmas: [f64; 3]) -> Result<DensityVolume> {
    let values: Vec<f64> = grid
        .iter_coords()
        .map(|c| {
            let mut q = 0.0;
            for axis in 0..3 {
                let d = (c[axis] as f64 - center[axis]) / sigmas[axis];
                q += d * d;
            }
            (-0.5 * q).exp()
        })
        .collect();
    DensityVolume::new(grid, values)?.normalize_mass(NORMALIZE_EPSILON)
}

/// Separable density: constant over y and z, with an x-profile of a flat
/// pedestal `base` plus Gaussian humps `(amplitude, center, sigma)`.
/// Mass-normalized with a positive floor.
pub fn slab_profile(
    grid: GridSpec,
    base: f64,
    humps: &[(f64, f64, f64)],
) -> Result<DensityVolume> {
    let values: Vec<f64> = grid
        .iter_coords()
        .map(|c| {
            let x = c[0] as f64;
            let mut p = base;
            for &(amp, mu, sigma) in humps {
                p += amp * (-(x - mu) * (x - mu) / (2.0 * sigma * sigma)).exp();
            }
            p
        })
        .collect();
    DensityVolume::new(grid, values)?.normalize_mass(NORMALIZE_EPSILON)
}

/// Random slab pair generator: both profiles share the pedestal and hump
/// count (drawn once per pair) but have independent hump parameters.
/// Amplitude, sigma, and center are drawn uniformly from the given ranges.
pub struct SlabFamily {
    pub grid: GridSpec,
    pub base: f64,
    pub amplitude: (f64, f64),
    pub sigma: (f64, f64),
    pub center: (f64, f64),
    pub humps: (u64, u64),
}

impl SlabFamily {
    /// The benchmark family: 32x4x4 grids, pedestal 0.3, two or three humps
    /// of moderate contrast well inside the domain.
    pub fn benchmark() -> Result<SlabFamily> {
        Ok(SlabFamily {
            grid: GridSpec::new(32, 4, 4)?,
            base: 0.3,
            amplitude: (0.4, 0.8),
            sigma: (3.0, 5.0),
            center: (10.0, 22.0),
            humps: (2, 3),
        })
    }

    /// Draw the next profile pair from the stream.
    pub fn sample_pair(&self, rng: &mut ChaCha8Rng) -> Result<(DensityVolume, DensityVolume)> {
        let (lo, hi) = self.humps;
        let n = lo + if hi > lo { rng.next_u64() % (hi - lo + 1) } else { 0 };
        let profile = |rng: &mut ChaCha8Rng| {
            let humps: Vec<(f64, f64, f64)> = (0..n)
                .map(|_| {
                    (
                        uniform(rng, self.amplitude.0, self.amplitude.1),
                        uniform(rng, self.center.0, self.center.1),
                        uniform(rng, self.sigma.0, self.sigma.1),
                    )
                })
                .collect();
            slab_profile(self.grid, self.base, &humps)
        };
        let a = profile(rng)?;
        let b = profile(rng)?;
        Ok((a, b))
    }
}

/// Parameters for the two-class ellipsoid phantom cohort.
///
/// Class 0 carries an isotropic blob; class 1 stretches it along x and
/// compresses it along y by the same relative factor. Per-sample center
/// jitter, semi-axis jitter, and a non-negative voxel noise pedestal keep
/// the classes from being trivially identical while leaving them linearly
/// separable in transport-feature space.
#[derive(Debug, Clone)]
pub struct PhantomConfig {
    pub grid: GridSpec,
    /// Total cohort size; classes alternate 0, 1, 0, 1, ...
    pub count: usize,
    /// Base semi-axis (isotropic sigma, in voxels) of class 0.
    pub sigma: f64,
    /// Relative anisotropic stretch separating class 1 from class 0.
    pub stretch: f64,
    /// Uniform center jitter amplitude, in voxels.
    pub center_jitter: f64,
    /// Relative Gaussian jitter of each semi-axis.
    pub sigma_jitter: f64,
    /// Additive uniform voxel noise amplitude, relative to the blob peak.
    pub noise: f64,
    pub seed: u64,
}

impl PhantomConfig {
    /// Benchmark defaults on the given grid: 15% stretch, mild jitter and
    /// noise.
    pub fn new(grid: GridSpec, count: usize, seed: u64) -> PhantomConfig {
        PhantomConfig {
            grid,
            count,
            sigma: 4.2,
            stretch: 0.15,
            center_jitter: 0.75,
            sigma_jitter: 0.04,
            noise: 0.02,
            seed,
        }
    }
}

/// Generate the phantom cohort: `(volumes, labels)` with labels 0.0 / 1.0
/// alternating. Deterministic in `cfg.seed`.
pub fn phantom_cohort(cfg: &PhantomConfig) -> Result<(Vec<DensityVolume>, Vec<f64>)> {
    let mut rng = rng(cfg.seed);
    let grid_center = cfg.grid.center();
    let mut volumes = Vec::with_capacity(cfg.count);
    let mut labels = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let label = (i % 2) as f64;
        let mut center = grid_center;
        for c in &mut center {
            *c += uniform(&mut rng, -cfg.center_jitter, cfg.center_jitter);
        }
        let mut sigmas = if label == 0.0 {
            [cfg.sigma, cfg.sigma, cfg.sigma]
        } else {
            [
                cfg.sigma * (1.0 + cfg.stretch),
                cfg.sigma / (1.0 + cfg.stretch),
                cfg.sigma,
            ]
        };
        for s in &mut sigmas {
            *s *= (1.0 + cfg.sigma_jitter * normal(&mut rng)).max(0.5);
        }
        let blob = ellipsoid_blob(cfg.grid, center, sigmas)?;
        let peak = blob.max();
        let noisy: Vec<f64> = blob
            .values()
            .iter()
            .map(|&v| v + cfg.noise * peak * uniform(&mut rng, 0.0, 1.0))
            .collect();
        let volume = DensityVolume::new(cfg.grid, noisy)?.normalize_mass(NORMALIZE_EPSILON)?;
        volumes.push(volume);
        labels.push(label);
    }
    Ok((volumes, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seed_deterministic() {
        let grid = GridSpec::cube(16).unwrap();
        let cfg = PhantomConfig::new(grid, 4, 7);
        let (a, _) = phantom_cohort(&cfg).unwrap();
        let (b, _) = phantom_cohort(&cfg).unwrap();
        for (va, vb) in a.iter().zip(&b) {
            assert_eq!(va.values(), vb.values());
        }
    }

    #[test]
    fn phantom_labels_alternate_and_volumes_normalize() {
        let grid = GridSpec::cube(16).unwrap();
        let cfg = PhantomConfig::new(grid, 6, 1);
        let (volumes, labels) = phantom_cohort(&cfg).unwrap();
        assert_eq!(labels, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        for v in &volumes {
            assert!((v.sum() - 1.0).abs() < 1e-9);
            assert!(v.values().iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn class_one_is_stretched_along_x() {
        let grid = GridSpec::cube(32).unwrap();
        let mut cfg = PhantomConfig::new(grid, 2, 3);
        cfg.center_jitter = 0.0;
        cfg.sigma_jitter = 0.0;
        cfg.noise = 0.0;
        let (volumes, _) = phantom_cohort(&cfg).unwrap();
        let spread = |v: &DensityVolume, axis: usize| {
            let com = v.center_of_mass();
            let mut m = 0.0;
            for (idx, c) in grid.iter_coords().enumerate() {
                let d = c[axis] as f64 - com[axis];
                m += v.values()[idx] * d * d;
            }
            m
        };
        assert!(spread(&volumes[1], 0) > 1.2 * spread(&volumes[0], 0));
        assert!(spread(&volumes[1], 1) < 0.9 * spread(&volumes[0], 1));
    }

    #[test]
    fn slab_family_draws_profiles_within_ranges() {
        let fam = SlabFamily::benchmark().unwrap();
        let mut rng = rng(41);
        let (a, b) = fam.sample_pair(&mut rng).unwrap();
        assert!((a.sum() - 1.0).abs() < 1e-9);
        assert!((b.sum() - 1.0).abs() < 1e-9);
        // Separable: every (y, z) column repeats the same x-profile.
        let g = fam.grid;
        for x in 0..32 {
            let v0 = a.values()[g.index(x, 0, 0)];
            for y in 0..4 {
                for z in 0..4 {
                    assert_eq!(a.values()[g.index(x, y, z)], v0);
                }
            }
        }
    }

    #[test]
    fn normal_has_reasonable_moments() {
        let mut r = rng(11);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let v = normal(&mut r);
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
