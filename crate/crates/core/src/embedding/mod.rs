//! Dataset ingestion and linear optimal transport features.
//!
//! A cohort of density volumes becomes an `N x D` feature matrix
//! (`D = 3 h w d`): each subject's transport map from the common reference
//! is weighted by the square root of the reference density and flattened.
//! Euclidean geometry on the rows then reproduces the weighted L2 geometry
//! on the maps, which is what makes downstream linear statistics meaningful.
//! Solves are the expensive step, so [`batch_embed`] distributes them over a
//! worker pool and caches each map on disk, keyed by the volume, reference,
//! and solver configuration.

mod cache;

pub use cache::{config_hash, sample_hash, volume_hash, CacheEntry};

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grid::{DensityVolume, VectorField};
use crate::npy::{self, DType};
use crate::solver::{solve_monge, SolverConfig};
use crate::synth::NORMALIZE_EPSILON;
use crate::{Error, Result};

/// Whether a manifest describes training or testing data. Training mode is
/// allowed to derive the reference from the cohort; test mode never does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Train,
    Test,
}

/// One manifest row: a volume path, its label, and any extra columns kept
/// verbatim for downstream use (age, site, ...).
#[derive(Debug, Clone)]
pub struct ManifestRecord {
    pub image_path: PathBuf,
    pub label: f64,
    pub extras: Vec<(String, String)>,
}

/// A parsed dataset manifest.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub mode: DatasetMode,
    /// Directory of the CSV file; relative image paths resolve against it.
    pub base_dir: PathBuf,
}

impl Manifest {
    /// Absolute (or base-relative) path of record `i`'s volume.
    pub fn resolve_path(&self, record: &ManifestRecord) -> PathBuf {
        if record.image_path.is_absolute() {
            record.image_path.clone()
        } else {
            self.base_dir.join(&record.image_path)
        }
    }
}

/// Parse a CSV manifest with header columns `image_path` and `label`;
/// additional columns are preserved as opaque strings.
pub fn load_manifest(csv_path: &Path, mode: DatasetMode) -> Result<Manifest> {
    let file = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: csv_path.to_path_buf(),
            source: e,
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: csv_path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let path_col = column("image_path")?;
    let label_col = column("label")?;
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Csv {
            path: csv_path.to_path_buf(),
            source: e,
        })?;
        let bad = |reason: String| Error::BadRecord {
            path: csv_path.to_path_buf(),
            record: i + 1,
            reason,
        };
        let image_path = row
            .get(path_col)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad("empty image_path".into()))?;
        let label_raw = row
            .get(label_col)
            .ok_or_else(|| bad("missing label field".into()))?;
        let label: f64 = label_raw
            .trim()
            .parse()
            .map_err(|_| bad(format!("label '{label_raw}' is not numeric")))?;
        let extras = headers
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != path_col && c != label_col)
            .map(|(c, name)| (name.to_string(), row.get(c).unwrap_or("").to_string()))
            .collect();
        records.push(ManifestRecord {
            image_path: PathBuf::from(image_path),
            label,
            extras,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyManifest {
            path: csv_path.to_path_buf(),
        });
    }
    Ok(Manifest {
        records,
        mode,
        base_dir: csv_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
    })
}

/// Volumes, labels, and (in train mode) the reference density.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub volumes: Vec<DensityVolume>,
    pub labels: Vec<f64>,
    pub reference: Option<DensityVolume>,
}

/// Load every volume named by the manifest.
///
/// With `normalized = true` each volume must already have unit mass
/// (checked to 1e-6); otherwise volumes are mass-normalized on load. In
/// train mode with no `reference_path`, the reference is the renormalized
/// voxelwise mean of the (normalized) training volumes; in test mode the
/// reference is only ever read from `reference_path`. Volumes whose center
/// of mass sits further than 10% of the smallest axis from the grid center
/// trigger a warning, since off-center data degrades the shared reference.
pub fn load_dataset(
    manifest: &Manifest,
    reference_path: Option<&Path>,
    normalized: bool,
) -> Result<Dataset> {
    let mut volumes = Vec::with_capacity(manifest.records.len());
    let mut labels = Vec::with_capacity(manifest.records.len());
    for (i, record) in manifest.records.iter().enumerate() {
        let path = manifest.resolve_path(record);
        let volume = npy::read_volume(&path)?;
        if let Some(first) = volumes.first() {
            let first: &DensityVolume = first;
            if first.grid() != volume.grid() {
                return Err(Error::grid_mismatch(
                    format!("{:?} {:?}", manifest.resolve_path(&manifest.records[0]), first.grid().dims()),
                    format!("{:?} {:?}", path, volume.grid().dims()),
                ));
            }
        }
        let volume = check_or_normalize(volume, normalized)?;
        warn_if_off_center(&volume, i);
        volumes.push(volume);
        labels.push(record.label);
    }
    let reference = match (reference_path, manifest.mode) {
        (Some(path), _) => {
            let reference = npy::read_volume(path)?;
            if let Some(first) = volumes.first() {
                if first.grid() != reference.grid() {
                    return Err(Error::grid_mismatch(
                        format!("volumes {:?}", first.grid().dims()),
                        format!("reference {:?} {:?}", path, reference.grid().dims()),
                    ));
                }
            }
            Some(check_or_normalize(reference, normalized)?)
        }
        (None, DatasetMode::Train) => Some(
            DensityVolume::mean_of(&volumes)?.normalize_mass(NORMALIZE_EPSILON)?,
        ),
        (None, DatasetMode::Test) => None,
    };
    Ok(Dataset {
        volumes,
        labels,
        reference,
    })
}

fn check_or_normalize(volume: DensityVolume, normalized: bool) -> Result<DensityVolume> {
    if normalized {
        let sum = volume.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::NotNormalized { sum });
        }
        Ok(volume)
    } else {
        volume.normalize_mass(NORMALIZE_EPSILON)
    }
}

fn warn_if_off_center(volume: &DensityVolume, index: usize) {
    let com = volume.center_of_mass();
    let center = volume.grid().center();
    let dist = (0..3)
        .map(|a| (com[a] - center[a]).powi(2))
        .sum::<f64>()
        .sqrt();
    let min_axis = volume.grid().dims().into_iter().min().unwrap_or(1) as f64;
    if dist > 0.1 * min_axis {
        log::warn!(
            "volume {index}: center of mass {com:?} is {dist:.2} voxels from the grid center; \
             center the data before embedding for a meaningful shared reference"
        );
    }
}

/// Dense row-major `N x D` feature matrix, `f64` in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<FeatureMatrix> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "feature matrix",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    /// Stack equal-length rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<FeatureMatrix> {
        let n = rows.len();
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * cols);
        for row in &rows {
            if row.len() != cols {
                return Err(Error::DimMismatch {
                    context: "feature matrix row",
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        FeatureMatrix::new(n, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Keep only the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Write as a 2-D `.npy` array; `F32` is the storage default.
    pub fn write_npy(&self, path: &Path, dtype: DType) -> Result<()> {
        npy::write(path, &[self.rows, self.cols], &self.data, dtype)
    }

    /// Read a 2-D `.npy` array.
    pub fn read_npy(path: &Path) -> Result<FeatureMatrix> {
        let (rows, cols, data) = npy::read_matrix(path)?;
        FeatureMatrix::new(rows, cols, data)
    }
}

/// Outcome of one sample's solve, kept alongside its feature row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub transport_cost: f64,
    pub mp_residual: f64,
    pub converged: bool,
    pub iterations_per_level: Vec<usize>,
    /// Present when the solve failed outright; the sample then carries an
    /// identity map (zero feature row) with `converged = false`.
    pub error: Option<String>,
}

/// Features, labels, reference, and per-sample diagnostics for a cohort.
#[derive(Debug, Clone)]
pub struct EmbeddingResult {
    pub features: FeatureMatrix,
    pub labels: Vec<f64>,
    pub reference: DensityVolume,
    pub diagnostics: Vec<SampleDiagnostics>,
    /// Number of actual solves (cache misses) performed.
    pub solves_performed: usize,
}

impl EmbeddingResult {
    pub fn all_converged(&self) -> bool {
        self.diagnostics.iter().all(|d| d.converged)
    }
}

/// Weight a map by the reference and flatten: component-major C-order of
/// `(f - Id) * sqrt(I0)`. The squared Euclidean norm of the row equals the
/// map's transport cost, so feature-space distances are transport distances.
pub fn featurize(map: &VectorField, reference: &DensityVolume) -> Result<Vec<f64>> {
    if map.grid() != reference.grid() {
        return Err(Error::grid_mismatch("map grid", "reference grid"));
    }
    let grid = reference.grid();
    let n = grid.len();
    let mut row = Vec::with_capacity(3 * n);
    for axis in 0..3 {
        let comp = map.component(axis);
        for (idx, coords) in grid.iter_coords().enumerate() {
            let w = reference.values()[idx].sqrt();
            row.push((comp[idx] - coords[axis] as f64) * w);
        }
    }
    Ok(row)
}

/// Invert [`featurize`]: `f = Id + row / max(sqrt(I0), eps)`, with the floor
/// `eps = sqrt(1e-8 * mean positive I0)` keeping the division finite off the
/// reference's support.
pub fn defeaturize(row: &[f64], reference: &DensityVolume) -> Result<VectorField> {
    let grid = reference.grid();
    let n = grid.len();
    if row.len() != 3 * n {
        return Err(Error::DimMismatch {
            context: "defeaturize",
            expected: 3 * n,
            got: row.len(),
        });
    }
    let eps = (1e-8 * reference.mean_positive()).sqrt();
    let mut map = VectorField::identity(grid);
    for axis in 0..3 {
        let comp = map.component_mut(axis);
        for idx in 0..n {
            let w = reference.values()[idx].sqrt().max(eps);
            comp[idx] += row[axis * n + idx] / w;
        }
    }
    Ok(map)
}

/// Embed a cohort: solve reference-to-volume transport for every sample,
/// featurize the maps, and assemble the rows in manifest order.
///
/// Up to `workers` solves run concurrently (requires the `parallel`
/// feature; otherwise execution is serial), and the output is bit-identical
/// for any worker count because each solve is a pure function of its inputs.
/// With `cache_dir` set, maps are reloaded from disk when the volume,
/// reference, and config all match a previous run. Solver failures on
/// individual samples are recorded in the diagnostics without aborting the
/// batch; mismatched grids abort.
pub fn batch_embed(
    volumes: &[DensityVolume],
    labels: &[f64],
    reference: &DensityVolume,
    cfg: &SolverConfig,
    workers: usize,
    cache_dir: Option<&Path>,
) -> Result<EmbeddingResult> {
    cfg.validate()?;
    if volumes.is_empty() {
        return Err(Error::EmptyInput { what: "volumes" });
    }
    if labels.len() != volumes.len() {
        return Err(Error::DimMismatch {
            context: "batch_embed labels",
            expected: volumes.len(),
            got: labels.len(),
        });
    }
    if workers == 0 {
        return Err(Error::InvalidParameter {
            name: "workers",
            reason: "must be at least 1".into(),
        });
    }
    for v in volumes {
        if v.grid() != reference.grid() {
            return Err(Error::grid_mismatch(
                format!("volume {:?}", v.grid().dims()),
                format!("reference {:?}", reference.grid().dims()),
            ));
        }
    }
    let reference_hash = volume_hash(reference);
    let cfg_hash = config_hash(cfg);
    let solve_one = |volume: &DensityVolume| -> Result<(Vec<f64>, SampleDiagnostics, bool)> {
        let vol_hash = volume_hash(volume);
        let key = sample_hash(&vol_hash, &reference_hash, &cfg_hash);
        if let Some(dir) = cache_dir {
            if let Some((map, entry)) = cache::load(dir, &key, &vol_hash, &reference_hash, &cfg_hash)
            {
                let row = featurize(&map, reference)?;
                let diag = SampleDiagnostics {
                    transport_cost: entry.transport_cost,
                    mp_residual: entry.mp_residual,
                    converged: entry.converged,
                    iterations_per_level: entry.iterations_per_level,
                    error: None,
                };
                return Ok((row, diag, false));
            }
        }
        match solve_monge(reference, volume, cfg) {
            Ok(solution) => {
                if let Some(dir) = cache_dir {
                    let entry = CacheEntry {
                        volume_hash: vol_hash,
                        reference_hash: reference_hash.clone(),
                        config_hash: cfg_hash.clone(),
                        transport_cost: solution.transport_cost,
                        mp_residual: solution.mp_residual,
                        converged: solution.converged,
                        iterations_per_level: solution.iterations_per_level.clone(),
                    };
                    cache::store(dir, &key, &solution.map, &entry)?;
                }
                let row = featurize(&solution.map, reference)?;
                let diag = SampleDiagnostics {
                    transport_cost: solution.transport_cost,
                    mp_residual: solution.mp_residual,
                    converged: solution.converged,
                    iterations_per_level: solution.iterations_per_level,
                    error: None,
                };
                Ok((row, diag, true))
            }
            Err(e) => {
                let row = vec![0.0; 3 * reference.grid().len()];
                let diag = SampleDiagnostics {
                    transport_cost: 0.0,
                    mp_residual: 1.0,
                    converged: false,
                    iterations_per_level: Vec::new(),
                    error: Some(e.to_string()),
                };
                Ok((row, diag, false))
            }
        }
    };
    let results = run_pool(volumes, workers, &solve_one)?;
    let mut rows = Vec::with_capacity(volumes.len());
    let mut diagnostics = Vec::with_capacity(volumes.len());
    let mut solves_performed = 0;
    for (row, diag, solved) in results {
        rows.push(row);
        diagnostics.push(diag);
        solves_performed += usize::from(solved);
    }
    Ok(EmbeddingResult {
        features: FeatureMatrix::from_rows(rows)?,
        labels: labels.to_vec(),
        reference: reference.clone(),
        diagnostics,
        solves_performed,
    })
}

#[cfg(feature = "parallel")]
fn run_pool<T: Send>(
    volumes: &[DensityVolume],
    workers: usize,
    solve_one: &(impl Fn(&DensityVolume) -> Result<T> + Sync),
) -> Result<Vec<T>> {
    use rayon::prelude::*;
    if workers == 1 {
        return volumes.iter().map(solve_one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter {
            name: "workers",
            reason: e.to_string(),
        })?;
    pool.install(|| volumes.par_iter().map(solve_one).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_pool<T: Send>(
    volumes: &[DensityVolume],
    _workers: usize,
    solve_one: &(impl Fn(&DensityVolume) -> Result<T> + Sync),
) -> Result<Vec<T>> {
    volumes.iter().map(solve_one).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::synth;
    use std::io::Write;

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("manifest.csv");
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn manifest_parses_labels_and_extras() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(
            dir.path(),
            "image_path,label,age\n./data/0.npy,1,63\n./data/1.npy,0,58\n",
        );
        let m = load_manifest(&path, DatasetMode::Train).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[0].label, 1.0);
        assert_eq!(m.records[1].label, 0.0);
        assert_eq!(m.records[0].extras, vec![("age".to_string(), "63".to_string())]);
        assert_eq!(
            m.resolve_path(&m.records[0]),
            dir.path().join("./data/0.npy")
        );
    }

    #[test]
    fn manifest_requires_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), "image_path,target\na.npy,1\n");
        match load_manifest(&path, DatasetMode::Train) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "label"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn manifest_rejects_empty_and_bad_labels() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write_manifest(dir.path(), "image_path,label\n");
        assert!(matches!(
            load_manifest(&empty, DatasetMode::Test),
            Err(Error::EmptyManifest { .. })
        ));
        let bad = write_manifest(dir.path(), "image_path,label\na.npy,sick\n");
        assert!(matches!(
            load_manifest(&bad, DatasetMode::Test),
            Err(Error::BadRecord { .. })
        ));
    }

    fn blob_file(dir: &Path, name: &str, center: [f64; 3]) -> DensityVolume {
        let grid = GridSpec::cube(8).unwrap();
        let v = synth::gaussian_blob(grid, center, 1.5).unwrap();
        npy::write_volume(&dir.join(name), &v, DType::F64).unwrap();
        v
    }

    #[test]
    fn load_dataset_builds_mean_reference_in_train_mode() {
        let dir = tempfile::tempdir().unwrap();
        let a = blob_file(dir.path(), "a.npy", [3.5, 3.5, 3.5]);
        let _ = blob_file(dir.path(), "b.npy", [3.5, 3.5, 3.5]);
        let path = write_manifest(dir.path(), "image_path,label\na.npy,0\nb.npy,1\n");
        let m = load_manifest(&path, DatasetMode::Train).unwrap();
        let ds = load_dataset(&m, None, true).unwrap();
        let reference = ds.reference.unwrap();
        // Mean of two identical volumes is that volume (after renormalizing).
        for (r, v) in reference.values().iter().zip(a.values()) {
            assert!((r - v).abs() < 1e-9);
        }
        let ds_test = load_dataset(
            &load_manifest(&path, DatasetMode::Test).unwrap(),
            None,
            true,
        )
        .unwrap();
        assert!(ds_test.reference.is_none());
    }

    #[test]
    fn load_dataset_strict_normalization_check() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::cube(4).unwrap();
        let v = DensityVolume::new(grid, vec![0.8 / 64.0; 64]).unwrap();
        npy::write_volume(&dir.path().join("v.npy"), &v, DType::F64).unwrap();
        let path = write_manifest(dir.path(), "image_path,label\nv.npy,0\n");
        let m = load_manifest(&path, DatasetMode::Train).unwrap();
        match load_dataset(&m, None, true) {
            Err(Error::NotNormalized { sum }) => assert!((sum - 0.8).abs() < 1e-9),
            other => panic!("expected NotNormalized, got {other:?}"),
        }
        // Auto-normalization fixes it.
        let ds = load_dataset(&m, None, false).unwrap();
        assert!((ds.volumes[0].sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn featurize_constant_shift_on_uniform_density() {
        let grid = GridSpec::cube(4).unwrap();
        let n = grid.len();
        let i0 = DensityVolume::uniform(grid, 1.0).unwrap();
        let mut f = VectorField::identity(grid);
        for idx in 0..n {
            f.component_mut(0)[idx] += 2.0;
            f.component_mut(2)[idx] -= 1.0;
        }
        let row = featurize(&f, &i0).unwrap();
        let w = (1.0 / n as f64).sqrt();
        for idx in 0..n {
            assert!((row[idx] - 2.0 * w).abs() < 1e-12);
            assert!((row[n + idx]).abs() < 1e-12);
            assert!((row[2 * n + idx] + w).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_norm_equals_transport_cost() {
        let grid = GridSpec::cube(6).unwrap();
        let i0 = synth::gaussian_blob(grid, [2.5, 2.5, 2.5], 1.2).unwrap();
        let mut rng = synth::rng(5);
        let mut f = VectorField::identity(grid);
        for axis in 0..3 {
            for v in f.component_mut(axis) {
                *v += synth::uniform(&mut rng, -0.5, 0.5);
            }
        }
        let row = featurize(&f, &i0).unwrap();
        let norm_sq: f64 = row.iter().map(|v| v * v).sum();
        let cost = crate::solver::transport_cost(&f, &i0);
        assert!((norm_sq - cost).abs() < 1e-10 * cost.max(1.0));
    }

    #[test]
    fn defeaturize_roundtrips_where_density_lives() {
        let grid = GridSpec::cube(6).unwrap();
        let i0 = DensityVolume::uniform(grid, 1.0).unwrap();
        let mut rng = synth::rng(9);
        let row: Vec<f64> = (0..3 * grid.len())
            .map(|_| synth::uniform(&mut rng, -1.0, 1.0))
            .collect();
        let f = defeaturize(&row, &i0).unwrap();
        let back = featurize(&f, &i0).unwrap();
        for (a, b) in row.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            defeaturize(&row[..10], &i0),
            Err(Error::DimMismatch { .. })
        ));
    }

    fn quick_cfg() -> SolverConfig {
        SolverConfig {
            levels: 2,
            max_iters: 40,
            polish_iters: 10,
            tail_iters: 5,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn self_embedding_is_almost_zero() {
        let grid = GridSpec::cube(8).unwrap();
        let reference = synth::gaussian_blob(grid, [3.5, 3.5, 3.5], 1.6).unwrap();
        let result = batch_embed(
            std::slice::from_ref(&reference),
            &[1.0],
            &reference,
            &quick_cfg(),
            1,
            None,
        )
        .unwrap();
        let max_w = reference.values().iter().cloned().fold(0.0f64, f64::max).sqrt();
        let row_inf = result.features.row(0).iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(row_inf < 0.05 * max_w, "row_inf {row_inf} vs {max_w}");
        assert_eq!(result.solves_performed, 1);
    }

    #[test]
    fn cache_hit_skips_solves_and_matches() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::cube(8).unwrap();
        let reference = synth::gaussian_blob(grid, [3.5, 3.5, 3.5], 1.6).unwrap();
        let target = synth::gaussian_blob(grid, [4.5, 3.5, 3.5], 1.6).unwrap();
        let volumes = vec![target];
        let cfg = quick_cfg();
        let first = batch_embed(&volumes, &[1.0], &reference, &cfg, 1, Some(dir.path())).unwrap();
        assert_eq!(first.solves_performed, 1);
        let second = batch_embed(&volumes, &[1.0], &reference, &cfg, 1, Some(dir.path())).unwrap();
        assert_eq!(second.solves_performed, 0);
        assert_eq!(first.features, second.features);
        assert_eq!(
            first.diagnostics[0].transport_cost,
            second.diagnostics[0].transport_cost
        );
        // A different config is a miss.
        let mut other = cfg.clone();
        other.lambda_init *= 2.0;
        let third = batch_embed(&volumes, &[1.0], &reference, &other, 1, Some(dir.path())).unwrap();
        assert_eq!(third.solves_performed, 1);
    }

    #[test]
    #[cfg(feature = "parallel")]
    fn worker_count_does_not_change_bits() {
        let grid = GridSpec::cube(8).unwrap();
        let mut rng = synth::rng(21);
        let volumes: Vec<DensityVolume> = (0..4)
            .map(|_| {
                let c = [
                    synth::uniform(&mut rng, 3.0, 5.0),
                    synth::uniform(&mut rng, 3.0, 5.0),
                    synth::uniform(&mut rng, 3.0, 5.0),
                ];
                synth::gaussian_blob(grid, c, 1.5).unwrap()
            })
            .collect();
        let reference = DensityVolume::mean_of(&volumes)
            .unwrap()
            .normalize_mass(1e-8)
            .unwrap();
        let labels = vec![0.0, 1.0, 0.0, 1.0];
        let cfg = quick_cfg();
        let serial = batch_embed(&volumes, &labels, &reference, &cfg, 1, None).unwrap();
        let parallel = batch_embed(&volumes, &labels, &reference, &cfg, 4, None).unwrap();
        assert_eq!(serial.features, parallel.features);
    }

    #[test]
    fn batch_embed_validates_inputs() {
        let grid = GridSpec::cube(4).unwrap();
        let reference = DensityVolume::uniform(grid, 1.0).unwrap();
        let cfg = SolverConfig::default();
        assert!(matches!(
            batch_embed(&[], &[], &reference, &cfg, 1, None),
            Err(Error::EmptyInput { .. })
        ));
        let volumes = vec![reference.clone()];
        assert!(matches!(
            batch_embed(&volumes, &[], &reference, &cfg, 1, None),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            batch_embed(&volumes, &[0.0], &reference, &cfg, 0, None),
            Err(Error::InvalidParameter { .. })
        ));
        let other = DensityVolume::uniform(GridSpec::cube(5).unwrap(), 1.0).unwrap();
        assert!(matches!(
            batch_embed(&[other], &[0.0], &reference, &cfg, 1, None),
            Err(Error::GridMismatch { .. })
        ));
    }
}
