//! `tbm3d analyze`: fit a model chain (PCA first, then the requested task)
//! on embedded features and score it on held-out features.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use tbm3d::embedding::FeatureMatrix;
use tbm3d::npy::{self, DType};
use tbm3d::stats::{
    auroc, calculate_alpha, cca_fit, classification_metrics, local_ns_predict, ns_fit,
    ns_predict, pca_fit, pca_transform, plda_fit, plda_predict, plda_transform, Metrics,
};

use crate::config::PipelineConfig;
use crate::util;

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    Pca,
    Plda,
    Cca,
    Ns,
    Lns,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Pca => "pca",
            Task::Plda => "plda",
            Task::Cca => "cca",
            Task::Ns => "ns",
            Task::Lns => "lns",
        }
    }
}

#[derive(clap::Args)]
pub struct Args {
    /// Embed output for training: a directory with features.npy and
    /// labels.npy, or the features file itself.
    #[arg(long)]
    features_train: PathBuf,
    /// Embed output for testing, same layout.
    #[arg(long)]
    features_test: PathBuf,
    #[arg(long, value_enum)]
    task: Task,
    /// Cumulative variance retained by PCA; defaults to the config value.
    #[arg(long)]
    var: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Fixed PLDA penalty (skips the plateau search).
    #[arg(long)]
    alpha: Option<f64>,
    /// Ridge added to both CCA covariance blocks.
    #[arg(long)]
    ridge: Option<f64>,
    /// Fit nearest-subspace on raw features instead of PCA scores.
    #[arg(long)]
    ns_direct: bool,
    /// Neighborhood size for local nearest subspace.
    #[arg(long)]
    k_nn: Option<usize>,
    /// Subspace energy threshold for ns/lns; defaults to the PCA threshold.
    #[arg(long)]
    rank_threshold: Option<f64>,
}

/// The uniform metrics document: classification keys always present (null
/// when the task has no such notion), task-specific extras appended.
#[derive(Serialize)]
struct MetricsFile {
    task: &'static str,
    accuracy: Option<f64>,
    balanced_accuracy: Option<f64>,
    auroc: Option<f64>,
    confusion_matrix: Option<Vec<Vec<usize>>>,
    classes: Option<Vec<f64>>,
    pca_k: usize,
    pca_cumulative_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    plda_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    intercept: Option<f64>,
}

impl MetricsFile {
    fn new(task: &'static str, pca_k: usize, pca_cumulative_ratio: f64) -> MetricsFile {
        MetricsFile {
            task,
            accuracy: None,
            balanced_accuracy: None,
            auroc: None,
            confusion_matrix: None,
            classes: None,
            pca_k,
            pca_cumulative_ratio,
            plda_alpha: None,
            rho: None,
            slope: None,
            intercept: None,
        }
    }

    fn set_classification(&mut self, m: &Metrics, auc: Option<f64>) {
        self.accuracy = Some(m.accuracy);
        self.balanced_accuracy = Some(m.balanced_accuracy);
        self.auroc = auc;
        self.confusion_matrix = Some(m.confusion_matrix.clone());
        self.classes = Some(m.classes.clone());
    }
}

fn write_vector(path: &Path, values: &[f64]) -> anyhow::Result<()> {
    npy::write(path, &[values.len()], values, DType::F64)?;
    Ok(())
}

pub fn run(args: Args, cfg: &PipelineConfig) -> anyhow::Result<u8> {
    let (x_train, y_train) = util::read_features(&args.features_train)?;
    let (x_test, y_test) = util::read_features(&args.features_test)?;
    anyhow::ensure!(
        x_train.cols() == x_test.cols(),
        "dimension mismatch: train features have {} columns, test features {}",
        x_train.cols(),
        x_test.cols()
    );

    let var = args.var.unwrap_or(cfg.variance_threshold);
    let pca = pca_fit(&x_train, var)?;
    let cumulative = pca.cumulative_ratio();
    println!(
        "pca: k = {} components retain {:.2}% of the variance (threshold {:.2}%)",
        pca.k,
        100.0 * cumulative,
        100.0 * var
    );
    let z_train = pca_transform(&pca, &x_train)?;
    let z_test = pca_transform(&pca, &x_test)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let models = args.out.join("models");
    pca.save(&models.join("pca"))?;
    write_vector(&args.out.join("labels_train.npy"), &y_train)?;
    write_vector(&args.out.join("labels_test.npy"), &y_test)?;

    let mut metrics = MetricsFile::new(args.task.name(), pca.k, cumulative);

    match args.task {
        Task::Pca => {
            z_train.write_npy(&args.out.join("scores_train.npy"), DType::F64)?;
            z_test.write_npy(&args.out.join("scores_test.npy"), DType::F64)?;
        }
        Task::Plda => {
            let alpha = match args.alpha.or(cfg.alpha) {
                Some(a) => a,
                None => {
                    let grid = cfg.alpha_candidates()?;
                    calculate_alpha(&z_train, &y_train, grid.as_deref())?
                }
            };
            let model = plda_fit(&z_train, &y_train, alpha)?;
            model.save(&models.join("plda"))?;
            let scores_train = plda_transform(&model, &z_train)?;
            let scores_test = plda_transform(&model, &z_test)?;
            let pred = plda_predict(&model, &z_test)?;
            write_vector(&args.out.join("scores_train.npy"), &scores_train)?;
            write_vector(&args.out.join("scores_test.npy"), &scores_test)?;
            write_vector(&args.out.join("predictions.npy"), &pred)?;
            let m = classification_metrics(&pred, &y_test)?;
            let auc = auroc(&scores_test, &y_test)?;
            metrics.set_classification(&m, Some(auc));
            metrics.plda_alpha = Some(alpha);
            println!(
                "plda: alpha = {alpha:.4e}, test accuracy {:.4}, auroc {auc:.4}",
                m.accuracy
            );
        }
        Task::Cca => {
            let targets_train = FeatureMatrix::new(y_train.len(), 1, y_train.clone())?;
            let model = cca_fit(&z_train, &targets_train, args.ridge.or(cfg.cca_ridge))?;
            model.save(&models.join("cca"))?;
            let scores_train = model.x_scores(&z_train)?;
            let scores_test = model.x_scores(&z_test)?;
            // Regress the target onto the canonical projection, then snap
            // each prediction to the nearest training class code.
            let predicted: Vec<f64> = scores_test
                .iter()
                .map(|s| model.slope * s + model.intercept)
                .collect();
            let mut codes: Vec<f64> = y_train.clone();
            codes.sort_by(|a, b| a.partial_cmp(b).unwrap());
            codes.dedup();
            let snapped: Vec<f64> = predicted
                .iter()
                .map(|&p| {
                    *codes
                        .iter()
                        .min_by(|a, b| {
                            (*a - p).abs().partial_cmp(&(*b - p).abs()).unwrap()
                        })
                        .unwrap()
                })
                .collect();
            write_vector(&args.out.join("scores_train.npy"), &scores_train)?;
            write_vector(&args.out.join("scores_test.npy"), &scores_test)?;
            write_vector(&args.out.join("predictions.npy"), &predicted)?;
            let m = classification_metrics(&snapped, &y_test)?;
            let auc = auroc(&scores_test, &y_test).ok();
            metrics.set_classification(&m, auc);
            metrics.rho = Some(model.rho);
            metrics.slope = Some(model.slope);
            metrics.intercept = Some(model.intercept);
            println!("cca: rho = {:.4}, snapped test accuracy {:.4}", model.rho, m.accuracy);
        }
        Task::Ns | Task::Lns => {
            let (f_train, f_test) = if args.ns_direct {
                (&x_train, &x_test)
            } else {
                (&z_train, &z_test)
            };
            let rank_threshold = args
                .rank_threshold
                .or(cfg.rank_threshold)
                .unwrap_or(var);
            let pred = if args.task == Task::Ns {
                let model = ns_fit(f_train, &y_train, rank_threshold)?;
                model.save(&models.join("ns"))?;
                ns_predict(&model, f_test)?
            } else {
                let k_nn = args.k_nn.unwrap_or(cfg.k_nn);
                local_ns_predict(f_train, &y_train, f_test, k_nn, rank_threshold)?
            };
            write_vector(&args.out.join("predictions.npy"), &pred)?;
            let m = classification_metrics(&pred, &y_test)?;
            metrics.set_classification(&m, None);
            println!("{}: test accuracy {:.4}", args.task.name(), m.accuracy);
        }
    }

    fs::write(
        args.out.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    util::write_run_manifest(
        &args.out,
        "analyze",
        &[
            ("features_train", args.features_train.as_path()),
            ("features_test", args.features_test.as_path()),
        ],
        &serde_json::json!({
            "task": args.task.name(),
            "variance_threshold": var,
            "alpha": args.alpha.or(cfg.alpha),
            "ridge": args.ridge.or(cfg.cca_ridge),
            "ns_direct": args.ns_direct,
            "k_nn": args.k_nn.unwrap_or(cfg.k_nn),
            "rank_threshold": args.rank_threshold.or(cfg.rank_threshold),
        }),
        None,
    )?;
    Ok(0)
}
