//! Pipeline configuration: one JSON document covering every subcommand.
//! Command-line flags override file values; `TBM3D_CACHE` overrides both for
//! the cache directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tbm3d::solver::SolverConfig;

/// Log-spaced candidate bounds for the PLDA penalty plateau search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AlphaGrid {
    pub fn candidates(&self) -> anyhow::Result<Vec<f64>> {
        anyhow::ensure!(
            self.min > 0.0 && self.max > self.min && self.count >= 2,
            "alpha_grid needs 0 < min < max and count >= 2"
        );
        let (lo, hi) = (self.min.ln(), self.max.ln());
        Ok((0..self.count)
            .map(|i| (lo + (hi - lo) * i as f64 / (self.count - 1) as f64).exp())
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Transport solver settings shared by embed, evaluate, and
    /// intrinsic-mean.
    pub solver: SolverConfig,
    /// Cumulative variance the PCA basis must retain.
    pub variance_threshold: f64,
    /// Fixed PLDA penalty; when unset the plateau search chooses one.
    pub alpha: Option<f64>,
    /// Candidate bounds for that search; unset uses the built-in grid.
    pub alpha_grid: Option<AlphaGrid>,
    /// Ridge added to both CCA covariance blocks; unset scales with trace.
    pub cca_ridge: Option<f64>,
    /// Concurrent transport solves.
    pub workers: usize,
    /// Transport-map cache directory.
    pub cache: Option<PathBuf>,
    /// Seed for the evaluate split driver and phantom generation.
    pub seed: u64,
    /// Neighborhood size for local nearest subspace.
    pub k_nn: usize,
    /// Nearest-subspace energy threshold; defaults to variance_threshold.
    pub rank_threshold: Option<f64>,
    /// Default output directory when a command omits --out.
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            solver: SolverConfig::default(),
            variance_threshold: 0.96,
            alpha: None,
            alpha_grid: None,
            cca_ridge: None,
            workers: 1,
            cache: None,
            seed: 17,
            k_nn: 10,
            rank_threshold: None,
            output: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
        let Some(path) = path else {
            return Ok(PipelineConfig::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        anyhow::ensure!(
            cfg.variance_threshold > 0.0 && cfg.variance_threshold <= 1.0,
            "variance_threshold must be in (0, 1]"
        );
        anyhow::ensure!(cfg.workers >= 1, "workers must be at least 1");
        cfg.solver.validate()?;
        Ok(cfg)
    }

    /// Cache directory resolution: `TBM3D_CACHE` env, then the flag, then
    /// the config file. An empty env value disables the override.
    pub fn resolve_cache(&self, flag: Option<&Path>) -> Option<PathBuf> {
        if let Ok(env) = std::env::var("TBM3D_CACHE") {
            if !env.is_empty() {
                return Some(PathBuf::from(env));
            }
        }
        flag.map(Path::to_path_buf).or_else(|| self.cache.clone())
    }

    /// PLDA candidate penalties from the config, when bounds are set.
    pub fn alpha_candidates(&self) -> anyhow::Result<Option<Vec<f64>>> {
        self.alpha_grid.as_ref().map(AlphaGrid::candidates).transpose()
    }
}
