//! `tbm3d intrinsic-mean`: transport-average a population of maps into a
//! mean volume with a slice preview.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use tbm3d::embedding::{defeaturize, FeatureMatrix};
use tbm3d::grid::VectorField;
use tbm3d::npy::{self, DType};
use tbm3d::solver::intrinsic_mean;
use tbm3d::viz::{emit_montage, SliceAxis};

use crate::config::PipelineConfig;
use crate::util;

#[derive(clap::Args)]
pub struct Args {
    /// Directory of transport maps (.npy vector fields), or an embed output
    /// directory with features.npy (rows are defeaturized into maps).
    #[arg(long)]
    maps_dir: PathBuf,
    /// Reference volume; defaults to reference.npy inside --maps-dir.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Barycenter refinement rounds.
    #[arg(long, default_value_t = 1)]
    iters: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Vector fields from either layout: an embed output (features.npy) or a
/// directory of per-subject field files, in sorted name order.
fn load_maps(dir: &Path, reference: &tbm3d::grid::DensityVolume) -> anyhow::Result<Vec<VectorField>> {
    let features_path = dir.join("features.npy");
    if features_path.is_file() {
        let features = FeatureMatrix::read_npy(&features_path)?;
        let mut maps = Vec::with_capacity(features.rows());
        for i in 0..features.rows() {
            maps.push(defeaturize(features.row(i), reference)?);
        }
        return Ok(maps);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "npy")
                && p.file_name().is_some_and(|n| n != "reference.npy" && n != "labels.npy")
        })
        .collect();
    paths.sort();
    let mut maps = Vec::with_capacity(paths.len());
    for p in &paths {
        maps.push(npy::read_field(p).with_context(|| format!("reading map {}", p.display()))?);
    }
    Ok(maps)
}

pub fn run(args: Args, cfg: &PipelineConfig) -> anyhow::Result<u8> {
    let reference_path = args
        .reference
        .clone()
        .unwrap_or_else(|| args.maps_dir.join("reference.npy"));
    let reference = npy::read_volume(&reference_path)
        .with_context(|| format!("reading reference {}", reference_path.display()))?;
    let maps = load_maps(&args.maps_dir, &reference)?;
    anyhow::ensure!(
        !maps.is_empty(),
        "no transport maps found in {}",
        args.maps_dir.display()
    );

    let mean = intrinsic_mean(&maps, &reference, args.iters, &cfg.solver)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    npy::write_volume(&args.out.join("mean.npy"), &mean, DType::F64)?;
    emit_montage(
        std::slice::from_ref(&mean),
        &["INTRINSIC MEAN".to_string()],
        SliceAxis::Z,
        None,
        &args.out.join("mean.png"),
    )?;
    util::write_run_manifest(
        &args.out,
        "intrinsic-mean",
        &[
            ("maps_dir", args.maps_dir.as_path()),
            ("reference", reference_path.as_path()),
        ],
        &serde_json::json!({
            "iters": args.iters,
            "maps": maps.len(),
            "solver": cfg.solver,
        }),
        None,
    )?;
    let com = mean.center_of_mass();
    println!(
        "intrinsic mean of {} maps: center of mass ({:.2}, {:.2}, {:.2}), second moment {:.4}",
        maps.len(),
        com[0],
        com[1],
        com[2],
        mean.second_moment()
    );
    Ok(0)
}
