//! `tbm3d visualize`: render fitted directions, geodesics, and score plots
//! from an analyze output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use tbm3d::grid::DensityVolume;
use tbm3d::npy::{self, DType};
use tbm3d::solver::geodesic_density;
use tbm3d::stats::{CcaModel, PcaModel, PldaModel};
use tbm3d::viz::{
    cca_direction_lift, emit_confusion, emit_montage, emit_projection_plot, emit_roc,
    mode_volumes, pca_mode, plda_direction_lift, ModeSpec, SliceAxis, DEFAULT_CCA_ALPHAS,
};

use crate::config::PipelineConfig;
use crate::util;

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum What {
    PcaModes,
    PldaMode,
    CcaMode,
    Geodesic,
    Projections,
    Roc,
    Confusion,
}

impl What {
    fn name(self) -> &'static str {
        match self {
            What::PcaModes => "pca-modes",
            What::PldaMode => "plda-mode",
            What::CcaMode => "cca-mode",
            What::Geodesic => "geodesic",
            What::Projections => "projections",
            What::Roc => "roc",
            What::Confusion => "confusion",
        }
    }
}

#[derive(clap::Args)]
pub struct Args {
    /// Analyze output directory holding models/ and score arrays.
    #[arg(long)]
    model_dir: Option<PathBuf>,
    /// Reference volume (.npy) the features were embedded against.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, value_enum)]
    what: What,
    /// PCA component indices to render.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    modes: Vec<usize>,
    /// Sampling multipliers, overriding the per-mode defaults.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Slice axis for montages.
    #[arg(long, default_value = "z")]
    axis: String,
    /// Fixed slice index; defaults to the center-of-mass slice.
    #[arg(long)]
    slice: Option<usize>,
    /// Transport map (.npy vector field) for geodesic rendering.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Target volume for geodesic rendering.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Also dump each rendered volume under volumes/.
    #[arg(long)]
    dump_volumes: bool,
    /// Output directory for figures.
    #[arg(long)]
    out: PathBuf,
}

struct RenderContext<'a> {
    axis: SliceAxis,
    slice: Option<usize>,
    out: &'a Path,
    dump: bool,
}

impl RenderContext<'_> {
    /// Emit per-alpha panels named `<what>_<mode>_<alpha>.png`, one strip
    /// montage combining them, and optional volume dumps.
    fn emit_series(
        &self,
        what: &str,
        mode: usize,
        alphas: &[f64],
        volumes: &[DensityVolume],
    ) -> anyhow::Result<()> {
        let captions: Vec<String> = alphas
            .iter()
            .map(|a| format!("ALPHA={}", util::format_alpha(*a)))
            .collect();
        // Window and slice every panel identically: single-panel montages
        // would each auto-window, so fix the slice from the strip's default.
        let slice = match self.slice {
            Some(s) => s,
            None => tbm3d::viz::default_slice(&volumes[0], self.axis),
        };
        for ((volume, alpha), caption) in volumes.iter().zip(alphas).zip(&captions) {
            let name = format!("{what}_{mode}_{}.png", util::format_alpha(*alpha));
            emit_montage(
                std::slice::from_ref(volume),
                std::slice::from_ref(caption),
                self.axis,
                Some(slice),
                &self.out.join(name),
            )?;
            if self.dump {
                let dump = self
                    .out
                    .join("volumes")
                    .join(format!("{what}_{mode}_{}.npy", util::format_alpha(*alpha)));
                fs::create_dir_all(dump.parent().unwrap())?;
                npy::write_volume(&dump, volume, DType::F64)?;
            }
        }
        emit_montage(
            volumes,
            &captions,
            self.axis,
            Some(slice),
            &self.out.join(format!("{what}_{mode}_strip.png")),
        )?;
        Ok(())
    }
}

fn require<'a, T>(value: &'a Option<T>, flag: &str, what: &str) -> anyhow::Result<&'a T> {
    value
        .as_ref()
        .with_context(|| format!("--what {what} requires {flag}"))
}

fn read_scores(dir: &Path, name: &str) -> anyhow::Result<Vec<f64>> {
    let path = dir.join(name);
    npy::read_vector(&path).with_context(|| format!("reading {}", path.display()))
}

pub fn run(args: Args, _cfg: &PipelineConfig) -> anyhow::Result<u8> {
    let axis = SliceAxis::parse(&args.axis)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let ctx = RenderContext {
        axis,
        slice: args.slice,
        out: &args.out,
        dump: args.dump_volumes,
    };
    let what = args.what.name();

    let mut spec_summary = serde_json::json!(null);
    match args.what {
        What::PcaModes => {
            let model_dir = require(&args.model_dir, "--model-dir", what)?;
            let reference = npy::read_volume(require(&args.reference, "--reference", what)?)?;
            let pca = PcaModel::load(&model_dir.join("models/pca"))?;
            let mut rendered = Vec::new();
            for &mode in &args.modes {
                let mut spec = pca_mode(&pca, mode)?;
                if let Some(alphas) = &args.alphas {
                    spec = spec.with_alphas(alphas)?;
                }
                let volumes = mode_volumes(&spec, &pca.mean, &reference)?;
                ctx.emit_series(what, mode, &spec.alphas, &volumes)?;
                rendered.push(serde_json::json!({
                    "mode": mode, "sigma": spec.sigma, "alphas": spec.alphas,
                }));
            }
            spec_summary = serde_json::json!(rendered);
        }
        What::PldaMode | What::CcaMode => {
            let model_dir = require(&args.model_dir, "--model-dir", what)?;
            let reference = npy::read_volume(require(&args.reference, "--reference", what)?)?;
            let pca = PcaModel::load(&model_dir.join("models/pca"))?;
            let mut spec: ModeSpec = match args.what {
                What::PldaMode => {
                    let plda = PldaModel::load(&model_dir.join("models/plda"))?;
                    plda_direction_lift(&plda, &pca)?
                }
                _ => {
                    let cca = CcaModel::load(&model_dir.join("models/cca"))?;
                    cca_direction_lift(&cca, &pca, &DEFAULT_CCA_ALPHAS)?
                }
            };
            if let Some(alphas) = &args.alphas {
                spec = spec.with_alphas(alphas)?;
            }
            let volumes = mode_volumes(&spec, &pca.mean, &reference)?;
            ctx.emit_series(what, 0, &spec.alphas, &volumes)?;
            spec_summary = serde_json::json!({ "sigma": spec.sigma, "alphas": spec.alphas });
        }
        What::Geodesic => {
            let map = npy::read_field(require(&args.map, "--map", what)?)?;
            let target = npy::read_volume(require(&args.target, "--target", what)?)?;
            let mut alphas = args
                .alphas
                .clone()
                .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75, 1.0]);
            alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
            alphas.dedup();
            let volumes: Vec<DensityVolume> = alphas
                .iter()
                .map(|&a| geodesic_density(&target, &map, a))
                .collect::<Result<_, _>>()?;
            ctx.emit_series(what, 0, &alphas, &volumes)?;
            spec_summary = serde_json::json!({ "alphas": alphas });
        }
        What::Projections => {
            let dir = require(&args.model_dir, "--model-dir", what)?;
            emit_projection_plot(
                &read_scores(dir, "scores_train.npy")?,
                &read_scores(dir, "labels_train.npy")?,
                &read_scores(dir, "scores_test.npy")?,
                &read_scores(dir, "labels_test.npy")?,
                &args.out.join("projections.png"),
            )?;
        }
        What::Roc => {
            let dir = require(&args.model_dir, "--model-dir", what)?;
            emit_roc(
                &read_scores(dir, "scores_test.npy")?,
                &read_scores(dir, "labels_test.npy")?,
                &args.out.join("roc.png"),
            )?;
        }
        What::Confusion => {
            let dir = require(&args.model_dir, "--model-dir", what)?;
            emit_confusion(
                &read_scores(dir, "predictions.npy")?,
                &read_scores(dir, "labels_test.npy")?,
                &args.out.join("confusion.png"),
            )?;
        }
    }

    let mut inputs: Vec<(&'static str, &Path)> = Vec::new();
    if let Some(p) = &args.model_dir {
        inputs.push(("model_dir", p));
    }
    if let Some(p) = &args.reference {
        inputs.push(("reference", p));
    }
    if let Some(p) = &args.map {
        inputs.push(("map", p));
    }
    if let Some(p) = &args.target {
        inputs.push(("target", p));
    }
    util::write_run_manifest(
        &args.out,
        "visualize",
        &inputs,
        &serde_json::json!({
            "what": what,
            "modes": args.modes,
            "alphas": args.alphas,
            "axis": args.axis,
            "slice": args.slice,
            "dump_volumes": args.dump_volumes,
        }),
        Some(&spec_summary),
    )?;
    println!("visualize {what}: figures written to {}", args.out.display());
    Ok(0)
}
