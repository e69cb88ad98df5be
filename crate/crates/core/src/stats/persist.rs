//! Model persistence: a JSON manifest per model plus `.npy` files for the
//! large arrays. Small vectors (discriminants, canonical directions) live
//! inline in the JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CcaModel, NsModel, PcaModel, PldaModel};
use crate::npy::{self, DType};
use crate::{Error, Result};

const VERSION: &str = env!("CARGO_PKG_VERSION");
const SIGN_CONVENTION: &str = "largest-magnitude-coordinate-positive";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Serialize, Deserialize)]
struct PcaManifest {
    version: String,
    sign_convention: String,
    d: usize,
    k: usize,
    variance_threshold: f64,
    explained_variance: Vec<f64>,
    total_variance: f64,
}

impl PcaModel {
    /// Write `pca.json`, `pca_mean.npy`, and `pca_basis.npy` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(
            &dir.join("pca.json"),
            &PcaManifest {
                version: VERSION.into(),
                sign_convention: SIGN_CONVENTION.into(),
                d: self.d,
                k: self.k,
                variance_threshold: self.variance_threshold,
                explained_variance: self.explained_variance.clone(),
                total_variance: self.total_variance,
            },
        )?;
        npy::write(&dir.join("pca_mean.npy"), &[self.d], &self.mean, DType::F64)?;
        npy::write(
            &dir.join("pca_basis.npy"),
            &[self.k, self.d],
            &self.basis,
            DType::F64,
        )
    }

    pub fn load(dir: &Path) -> Result<PcaModel> {
        let manifest: PcaManifest = read_json(&dir.join("pca.json"))?;
        let mean = npy::read_vector(&dir.join("pca_mean.npy"))?;
        let (k, d, basis) = npy::read_matrix(&dir.join("pca_basis.npy"))?;
        if k != manifest.k || d != manifest.d || mean.len() != d {
            return Err(Error::format(
                dir.join("pca.json"),
                "array shapes disagree with the manifest",
            ));
        }
        Ok(PcaModel {
            mean,
            basis,
            k,
            d,
            explained_variance: manifest.explained_variance,
            total_variance: manifest.total_variance,
            variance_threshold: manifest.variance_threshold,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PldaManifest {
    version: String,
    sign_convention: String,
    dim: usize,
    alpha: f64,
    b: f64,
    classes: Vec<f64>,
    score_std: f64,
    w: Vec<f64>,
}

impl PldaModel {
    /// Write `plda.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(
            &dir.join("plda.json"),
            &PldaManifest {
                version: VERSION.into(),
                sign_convention: "higher-class-code-projects-positive".into(),
                dim: self.dim,
                alpha: self.alpha,
                b: self.b,
                classes: self.classes.clone(),
                score_std: self.score_std,
                w: self.w.clone(),
            },
        )
    }

    pub fn load(dir: &Path) -> Result<PldaModel> {
        let m: PldaManifest = read_json(&dir.join("plda.json"))?;
        if m.w.len() != m.dim {
            return Err(Error::format(
                dir.join("plda.json"),
                "w length disagrees with dim",
            ));
        }
        Ok(PldaModel {
            w: m.w,
            alpha: m.alpha,
            b: m.b,
            classes: m.classes,
            score_std: m.score_std,
            dim: m.dim,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CcaManifest {
    version: String,
    a: Vec<f64>,
    b: Vec<f64>,
    rho: f64,
    ridge_x: f64,
    ridge_y: f64,
    slope: f64,
    intercept: f64,
    mean_x: Vec<f64>,
    mean_y: Vec<f64>,
    score_std: f64,
}

impl CcaModel {
    /// Write `cca.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(
            &dir.join("cca.json"),
            &CcaManifest {
                version: VERSION.into(),
                a: self.a.clone(),
                b: self.b.clone(),
                rho: self.rho,
                ridge_x: self.ridge_x,
                ridge_y: self.ridge_y,
                slope: self.slope,
                intercept: self.intercept,
                mean_x: self.mean_x.clone(),
                mean_y: self.mean_y.clone(),
                score_std: self.score_std,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<CcaModel> {
        let m: CcaManifest = read_json(&dir.join("cca.json"))?;
        Ok(CcaModel {
            a: m.a,
            b: m.b,
            rho: m.rho,
            ridge_x: m.ridge_x,
            ridge_y: m.ridge_y,
            slope: m.slope,
            intercept: m.intercept,
            mean_x: m.mean_x,
            mean_y: m.mean_y,
            score_std: m.score_std,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct NsManifest {
    version: String,
    dim: usize,
    rank_threshold: f64,
    classes: Vec<f64>,
    ranks: Vec<usize>,
}

impl NsModel {
    /// Write `ns.json` plus per-class mean/basis arrays into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(
            &dir.join("ns.json"),
            &NsManifest {
                version: VERSION.into(),
                dim: self.dim,
                rank_threshold: self.rank_threshold,
                classes: self.classes.clone(),
                ranks: self.ranks.clone(),
            },
        )?;
        for (c, (mean, basis)) in self.means.iter().zip(&self.bases).enumerate() {
            npy::write(&dir.join(format!("ns_mean_{c}.npy")), &[self.dim], mean, DType::F64)?;
            npy::write(
                &dir.join(format!("ns_basis_{c}.npy")),
                &[self.ranks[c], self.dim],
                basis,
                DType::F64,
            )?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<NsModel> {
        let m: NsManifest = read_json(&dir.join("ns.json"))?;
        let mut means = Vec::with_capacity(m.classes.len());
        let mut bases = Vec::with_capacity(m.classes.len());
        for c in 0..m.classes.len() {
            means.push(npy::read_vector(&dir.join(format!("ns_mean_{c}.npy")))?);
            let (r, d, basis) = npy::read_matrix(&dir.join(format!("ns_basis_{c}.npy")))?;
            if r != m.ranks[c] || d != m.dim {
                return Err(Error::format(
                    dir.join(format!("ns_basis_{c}.npy")),
                    "basis shape disagrees with the manifest",
                ));
            }
            bases.push(basis);
        }
        Ok(NsModel {
            classes: m.classes,
            means,
            bases,
            ranks: m.ranks,
            dim: m.dim,
            rank_threshold: m.rank_threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::embedding::FeatureMatrix;
    use crate::synth;

    fn data(seed: u64) -> (FeatureMatrix, Vec<f64>) {
        let mut rng = synth::rng(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..16 {
            let class = (i % 2) as f64;
            rows.push(
                (0..5)
                    .map(|d| synth::normal(&mut rng) + if d == 0 { 3.0 * class } else { 0.0 })
                    .collect::<Vec<_>>(),
            );
            labels.push(class);
        }
        (FeatureMatrix::from_rows(rows).unwrap(), labels)
    }

    #[test]
    fn all_models_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (x, labels) = data(1);
        let pca = pca_fit(&x, 0.96).unwrap();
        pca.save(dir.path()).unwrap();
        assert_eq!(PcaModel::load(dir.path()).unwrap(), pca);

        let z = pca_transform(&pca, &x).unwrap();
        let plda = plda_fit(&z, &labels, 0.5).unwrap();
        plda.save(dir.path()).unwrap();
        assert_eq!(PldaModel::load(dir.path()).unwrap(), plda);

        let y = FeatureMatrix::new(x.rows(), 1, labels.clone()).unwrap();
        let cca = cca_fit(&z, &y, None).unwrap();
        cca.save(dir.path()).unwrap();
        assert_eq!(CcaModel::load(dir.path()).unwrap(), cca);

        let ns = ns_fit(&z, &labels, 0.99).unwrap();
        ns.save(dir.path()).unwrap();
        assert_eq!(NsModel::load(dir.path()).unwrap(), ns);
    }

    #[test]
    fn loading_from_an_empty_dir_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        assert!(PcaModel::load(dir.path()).is_err());
        assert!(PldaModel::load(dir.path()).is_err());
    }
}
