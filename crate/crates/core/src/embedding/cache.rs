//! Content-addressed cache for solved transport maps.
//!
//! Each entry is `<cache_dir>/<sample_hash>.npy` (the map, float64 so cached
//! and fresh results are bit-identical) plus a `.json` sidecar holding the
//! input hashes and solve diagnostics. The sample hash commits to the volume,
//! the reference, and the solver configuration, so changing any of them
//! invalidates the entry.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::{DensityVolume, VectorField};
use crate::npy::{self, DType};
use crate::solver::SolverConfig;
use crate::{Error, Result};

/// Hex SHA-256 of a density volume: dimensions then voxel bytes.
pub fn volume_hash(volume: &DensityVolume) -> String {
    let mut hasher = Sha256::new();
    for d in volume.grid().dims() {
        hasher.update((d as u64).to_le_bytes());
    }
    for &v in volume.values() {
        hasher.update(v.to_le_bytes());
    }
    hex(&hasher.finalize())
}

/// Hex SHA-256 of the solver configuration's canonical JSON form.
pub fn config_hash(cfg: &SolverConfig) -> String {
    let json = serde_json::to_string(cfg).expect("solver config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex(&hasher.finalize())
}

/// Cache key for one solve: commits to volume, reference, and config.
pub fn sample_hash(volume_hash: &str, reference_hash: &str, config_hash: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(volume_hash.as_bytes());
    hasher.update(reference_hash.as_bytes());
    hasher.update(config_hash.as_bytes());
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Sidecar metadata stored next to each cached map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub volume_hash: String,
    pub reference_hash: String,
    pub config_hash: String,
    pub transport_cost: f64,
    pub mp_residual: f64,
    pub converged: bool,
    pub iterations_per_level: Vec<usize>,
}

fn map_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("{hash}.npy"))
}

fn sidecar_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("{hash}.json"))
}

/// Load a cache entry if present and its sidecar hashes match the key.
/// Corrupt or mismatched entries are treated as misses.
pub fn load(
    dir: &Path,
    hash: &str,
    volume_hash: &str,
    reference_hash: &str,
    config_hash: &str,
) -> Option<(VectorField, CacheEntry)> {
    let sidecar = fs::read_to_string(sidecar_path(dir, hash)).ok()?;
    let entry: CacheEntry = serde_json::from_str(&sidecar).ok()?;
    if entry.volume_hash != volume_hash
        || entry.reference_hash != reference_hash
        || entry.config_hash != config_hash
    {
        return None;
    }
    let map = npy::read_field(&map_path(dir, hash)).ok()?;
    Some((map, entry))
}

/// Persist a solved map and its sidecar. Both writes go through a temporary
/// sibling plus rename, so concurrent readers never observe partial files.
pub fn store(dir: &Path, hash: &str, map: &VectorField, entry: &CacheEntry) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    npy::write_field(&map_path(dir, hash), map, DType::F64)?;
    let sidecar = sidecar_path(dir, hash);
    let json = serde_json::to_string_pretty(entry).map_err(|e| Error::Json {
        path: sidecar.clone(),
        source: e,
    })?;
    let tmp = sidecar.with_extension("json.tmp");
    fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &sidecar).map_err(|e| Error::io(&sidecar, e))
}
