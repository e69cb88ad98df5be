//! Shared plumbing: run manifests, feature loading, and small formatters.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tbm3d::embedding::FeatureMatrix;
use tbm3d::npy;

/// Every command drops one of these next to its outputs: enough to replay
/// the run exactly. Deliberately no wall-clock data, so identical runs
/// produce identical bytes.
#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    inputs: BTreeMap<&'static str, String>,
    input_hashes: BTreeMap<&'static str, String>,
    config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<&'a serde_json::Value>,
}

fn sha256_file(path: &Path) -> Option<String> {
    let bytes = fs::read(path).ok()?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Some(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Write `run-manifest.json` into `out_dir`. `inputs` maps a role name to a
/// path; files that exist are content-hashed.
pub fn write_run_manifest(
    out_dir: &Path,
    command: &'static str,
    inputs: &[(&'static str, &Path)],
    config: &impl Serialize,
    extra: Option<&serde_json::Value>,
) -> anyhow::Result<()> {
    let mut input_map = BTreeMap::new();
    let mut hash_map = BTreeMap::new();
    for (name, path) in inputs {
        input_map.insert(*name, path.display().to_string());
        if let Some(hash) = sha256_file(path) {
            hash_map.insert(*name, hash);
        }
    }
    let manifest = RunManifest {
        tool: "tbm3d",
        version: env!("CARGO_PKG_VERSION"),
        command,
        inputs: input_map,
        input_hashes: hash_map,
        config: serde_json::to_value(config)?,
        extra,
    };
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join("run-manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Resolve an embed output: a directory containing `features.npy` and
/// `labels.npy`, or a direct path to a features file with `labels.npy`
/// alongside it.
pub fn read_features(path: &Path) -> anyhow::Result<(FeatureMatrix, Vec<f64>)> {
    let (features_path, labels_path) = if path.is_dir() {
        (path.join("features.npy"), path.join("labels.npy"))
    } else {
        let labels = path
            .parent()
            .map(|p| p.join("labels.npy"))
            .unwrap_or_else(|| PathBuf::from("labels.npy"));
        (path.to_path_buf(), labels)
    };
    let features = FeatureMatrix::read_npy(&features_path)
        .with_context(|| format!("reading features {}", features_path.display()))?;
    let labels = npy::read_vector(&labels_path)
        .with_context(|| format!("reading labels {}", labels_path.display()))?;
    anyhow::ensure!(
        labels.len() == features.rows(),
        "{} rows of features vs {} labels",
        features.rows(),
        labels.len()
    );
    Ok((features, labels))
}

/// Compact formatting for sampling multipliers in file names: `-2`, `-0.5`.
pub fn format_alpha(a: f64) -> String {
    if a == 0.0 {
        return "0".into();
    }
    let s = format!("{a:.4}");
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_formatting_is_compact() {
        assert_eq!(format_alpha(0.0), "0");
        assert_eq!(format_alpha(-2.0), "-2");
        assert_eq!(format_alpha(-0.5), "-0.5");
        assert_eq!(format_alpha(1.25), "1.25");
    }

    #[test]
    fn mean_std_handles_small_inputs() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (2.0f64).sqrt()).abs() < 1e-12);
    }
}
