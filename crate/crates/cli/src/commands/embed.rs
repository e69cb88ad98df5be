//! `tbm3d embed`: solve transport maps for a manifest of volumes and write
//! the feature matrix, labels, reference, and per-sample diagnostics.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use serde::Serialize;
use tbm3d::embedding::{batch_embed, load_dataset, load_manifest, DatasetMode, SampleDiagnostics};
use tbm3d::npy::{self, DType};

use crate::config::PipelineConfig;
use crate::util;

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum Mode {
    Train,
    Test,
}

#[derive(clap::Args)]
pub struct Args {
    /// CSV manifest with image_path and label columns.
    #[arg(long)]
    manifest: PathBuf,
    /// train derives the reference from the cohort; test requires
    /// --reference.
    #[arg(long, value_enum, default_value_t = Mode::Train)]
    mode: Mode,
    /// Reference volume (.npy); defaults to the cohort mean in train mode.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Require inputs to already have unit mass instead of normalizing.
    #[arg(long)]
    normalized: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Concurrent solves; defaults to the config value.
    #[arg(long)]
    workers: Option<usize>,
    /// Transport-map cache directory (TBM3D_CACHE overrides).
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Serialize)]
struct DiagnosticsFile<'a> {
    all_converged: bool,
    solves_performed: usize,
    samples: &'a [SampleDiagnostics],
}

pub fn run(args: Args, cfg: &PipelineConfig) -> anyhow::Result<u8> {
    let mode = match args.mode {
        Mode::Train => DatasetMode::Train,
        Mode::Test => DatasetMode::Test,
    };
    let manifest = load_manifest(&args.manifest, mode)?;
    let dataset = load_dataset(&manifest, args.reference.as_deref(), args.normalized)?;
    let reference = dataset
        .reference
        .clone()
        .context("test mode requires --reference")?;

    let workers = args.workers.unwrap_or(cfg.workers).max(1);
    let cache = cfg.resolve_cache(args.cache.as_deref());
    let result = batch_embed(
        &dataset.volumes,
        &dataset.labels,
        &reference,
        &cfg.solver,
        workers,
        cache.as_deref(),
    )?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    result.features.write_npy(&args.out.join("features.npy"), DType::F64)?;
    npy::write(
        &args.out.join("labels.npy"),
        &[result.labels.len()],
        &result.labels,
        DType::F64,
    )?;
    npy::write_volume(&args.out.join("reference.npy"), &result.reference, DType::F64)?;
    let diagnostics = DiagnosticsFile {
        all_converged: result.all_converged(),
        solves_performed: result.solves_performed,
        samples: &result.diagnostics,
    };
    fs::write(
        args.out.join("diagnostics.json"),
        serde_json::to_string_pretty(&diagnostics)?,
    )?;
    util::write_run_manifest(
        &args.out,
        "embed",
        &[("manifest", args.manifest.as_path())],
        &serde_json::json!({
            "solver": cfg.solver,
            "mode": match args.mode { Mode::Train => "train", Mode::Test => "test" },
            "normalized": args.normalized,
            "workers": workers,
            "cache": cache.as_ref().map(|c| c.display().to_string()),
        }),
        None,
    )?;

    for (i, d) in result.diagnostics.iter().enumerate() {
        if !d.converged {
            log::warn!(
                "sample {i}: unconverged (mp_residual {:.3e}{})",
                d.mp_residual,
                d.error.as_deref().map(|e| format!(", {e}")).unwrap_or_default()
            );
        }
    }
    println!(
        "embedded {} samples, {} solves performed",
        result.labels.len(),
        result.solves_performed
    );
    Ok(if result.all_converged() { 0 } else { 2 })
}
