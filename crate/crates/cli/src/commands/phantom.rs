//! `tbm3d phantom`: generate a synthetic two-class ellipsoid cohort plus a
//! manifest, ready for embed or evaluate.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use tbm3d::grid::GridSpec;
use tbm3d::npy::{self, DType};
use tbm3d::synth::{phantom_cohort, PhantomConfig};

use crate::config::PipelineConfig;
use crate::util;

#[derive(clap::Args)]
pub struct Args {
    /// Number of volumes; classes 0 and 1 alternate.
    #[arg(long, default_value_t = 160)]
    count: usize,
    /// Cube grid edge length in voxels.
    #[arg(long, default_value_t = 32)]
    grid: usize,
    /// Generation seed; defaults to the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Base blob semi-axis in voxels.
    #[arg(long, default_value_t = 4.2)]
    sigma: f64,
    /// Anisotropic stretch separating class 1 from class 0.
    #[arg(long, default_value_t = 0.15)]
    stretch: f64,
    /// Additive uniform noise relative to the blob peak.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Output directory for volumes and manifest.csv.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: Args, cfg: &PipelineConfig) -> anyhow::Result<u8> {
    let grid = GridSpec::cube(args.grid)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let mut phantom = PhantomConfig::new(grid, args.count, seed);
    phantom.sigma = args.sigma;
    phantom.stretch = args.stretch;
    phantom.noise = args.noise;

    let (volumes, labels) = phantom_cohort(&phantom)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let mut manifest = String::from("image_path,label\n");
    for (i, (volume, label)) in volumes.iter().zip(&labels).enumerate() {
        let name = format!("phantom_{i:03}.npy");
        npy::write_volume(&args.out.join(&name), volume, DType::F64)?;
        manifest.push_str(&format!("{name},{label}\n"));
    }
    let manifest_path = args.out.join("manifest.csv");
    fs::write(&manifest_path, manifest)
        .with_context(|| format!("writing {}", manifest_path.display()))?;

    util::write_run_manifest(
        &args.out,
        "phantom",
        &[],
        &serde_json::json!({
            "count": args.count,
            "grid": args.grid,
            "seed": seed,
            "sigma": phantom.sigma,
            "stretch": phantom.stretch,
            "center_jitter": phantom.center_jitter,
            "sigma_jitter": phantom.sigma_jitter,
            "noise": phantom.noise,
        }),
        None,
    )?;
    println!(
        "wrote {count} phantoms on a {g}x{g}x{g} grid to {out}",
        count = args.count,
        g = args.grid,
        out = args.out.display()
    );
    Ok(0)
}
