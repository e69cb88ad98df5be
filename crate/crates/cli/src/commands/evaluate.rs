//! `tbm3d evaluate`: embed a cohort once, then score classifiers over
//! repeated stratified train/test splits of the feature rows.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tbm3d::embedding::{batch_embed, load_dataset, load_manifest, DatasetMode};
use tbm3d::npy::{self, DType};
use tbm3d::stats::{
    calculate_alpha, classification_metrics, local_ns_predict, ns_fit, ns_predict, pca_fit,
    pca_transform, plda_fit, plda_predict,
};
use tbm3d::synth;

use crate::config::PipelineConfig;
use crate::util;

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Classifier {
    Plda,
    Ns,
    Lns,
}

impl Classifier {
    fn name(self) -> &'static str {
        match self {
            Classifier::Plda => "plda",
            Classifier::Ns => "ns",
            Classifier::Lns => "lns",
        }
    }
}

#[derive(clap::Args)]
pub struct Args {
    /// CSV manifest with image_path and label columns.
    #[arg(long)]
    manifest: PathBuf,
    /// Number of random train/test splits.
    #[arg(long, default_value_t = 20)]
    splits: usize,
    #[arg(long, default_value_t = 200)]
    train_size: usize,
    #[arg(long, default_value_t = 130)]
    test_size: usize,
    /// Classifiers to score.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "plda,ns,lns")]
    classifiers: Vec<Classifier>,
    /// Split seed; defaults to the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cumulative PCA variance threshold.
    #[arg(long)]
    var: Option<f64>,
    /// Fixed PLDA penalty (skips the per-split plateau search).
    #[arg(long)]
    alpha: Option<f64>,
    /// Neighborhood size for local nearest subspace.
    #[arg(long)]
    k_nn: Option<usize>,
    /// Concurrent solves during the embedding pass.
    #[arg(long)]
    workers: Option<usize>,
    /// Transport-map cache directory (TBM3D_CACHE overrides).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Require inputs to already have unit mass instead of normalizing.
    #[arg(long)]
    normalized: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Largest-remainder allocation of `total` slots proportional to `counts`,
/// capped per class. Deterministic: ties go to the lower class index.
fn allocate(counts: &[usize], total: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let mut alloc: Vec<usize> = Vec::with_capacity(counts.len());
    let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(counts.len());
    for (i, &c) in counts.iter().enumerate() {
        let quota = total as f64 * c as f64 / n as f64;
        let base = (quota.floor() as usize).min(c);
        alloc.push(base);
        fracs.push((i, quota - base as f64));
    }
    let mut remaining = total.saturating_sub(alloc.iter().sum());
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    while remaining > 0 {
        let mut placed = false;
        for &(i, _) in &fracs {
            if remaining == 0 {
                break;
            }
            if alloc[i] < counts[i] {
                alloc[i] += 1;
                remaining -= 1;
                placed = true;
            }
        }
        if !placed {
            break;
        }
    }
    alloc
}

/// In-place Fisher-Yates driven by the shared split stream.
fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        indices.swap(i, j);
    }
}

/// One stratified split without replacement: train indices, then test
/// indices from the remainder, both proportional to class frequencies.
fn stratified_split(
    labels: &[f64],
    train_size: usize,
    test_size: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut classes: Vec<f64> = labels.to_vec();
    classes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    classes.dedup();
    let mut members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| {
            labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == c)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    let train_alloc = allocate(&counts, train_size);
    let spare: Vec<usize> = counts
        .iter()
        .zip(&train_alloc)
        .map(|(c, t)| c - t)
        .collect();
    let test_alloc = allocate(&spare, test_size);

    let mut train = Vec::with_capacity(train_size);
    let mut test = Vec::with_capacity(test_size);
    for (c, member) in members.iter_mut().enumerate() {
        shuffle(member, rng);
        train.extend_from_slice(&member[..train_alloc[c]]);
        test.extend_from_slice(&member[train_alloc[c]..train_alloc[c] + test_alloc[c]]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[derive(Serialize)]
struct SplitMetrics {
    split: usize,
    accuracy: f64,
    balanced_accuracy: f64,
}

#[derive(Serialize)]
struct ClassifierSummary {
    classifier: &'static str,
    accuracy_mean: f64,
    accuracy_std: f64,
    balanced_accuracy_mean: f64,
    balanced_accuracy_std: f64,
    per_split: Vec<SplitMetrics>,
}

#[derive(Serialize)]
struct EvaluateMetrics {
    splits: usize,
    train_size: usize,
    test_size: usize,
    seed: u64,
    variance_threshold: f64,
    stratified: bool,
    all_converged: bool,
    solves_performed: usize,
    results: Vec<ClassifierSummary>,
}

pub fn run(args: Args, cfg: &PipelineConfig) -> anyhow::Result<u8> {
    anyhow::ensure!(args.splits >= 1, "need at least one split");
    anyhow::ensure!(
        !args.classifiers.is_empty(),
        "need at least one classifier"
    );
    let manifest = load_manifest(&args.manifest, DatasetMode::Train)?;
    let dataset = load_dataset(&manifest, None, args.normalized)?;
    let n = dataset.volumes.len();
    anyhow::ensure!(
        n >= args.train_size + args.test_size,
        "dataset has {n} samples but the split needs {} train + {} test",
        args.train_size,
        args.test_size
    );
    let reference = dataset.reference.clone().expect("train mode always has a reference");

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
    println!(
        "embedded {} samples, {} solves performed",
        n, result.solves_performed
    );

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

    let seed = args.seed.unwrap_or(cfg.seed);
    let var = args.var.unwrap_or(cfg.variance_threshold);
    let rank_threshold = cfg.rank_threshold.unwrap_or(var);
    let k_nn = args.k_nn.unwrap_or(cfg.k_nn);
    let mut classifiers = args.classifiers.clone();
    classifiers.dedup();

    let mut rng = synth::rng(seed);
    let mut per_classifier: Vec<Vec<(f64, f64)>> = vec![Vec::new(); classifiers.len()];
    for split in 0..args.splits {
        let (train_idx, test_idx) =
            stratified_split(&result.labels, args.train_size, args.test_size, &mut rng);
        let x_train = result.features.select_rows(&train_idx);
        let x_test = result.features.select_rows(&test_idx);
        let y_train: Vec<f64> = train_idx.iter().map(|&i| result.labels[i]).collect();
        let y_test: Vec<f64> = test_idx.iter().map(|&i| result.labels[i]).collect();

        let pca = pca_fit(&x_train, var)?;
        let z_train = pca_transform(&pca, &x_train)?;
        let z_test = pca_transform(&pca, &x_test)?;

        for (ci, classifier) in classifiers.iter().enumerate() {
            let pred = match classifier {
                Classifier::Plda => {
                    let alpha = match args.alpha.or(cfg.alpha) {
                        Some(a) => a,
                        None => {
                            let grid = cfg.alpha_candidates()?;
                            calculate_alpha(&z_train, &y_train, grid.as_deref())?
                        }
                    };
                    let model = plda_fit(&z_train, &y_train, alpha)?;
                    plda_predict(&model, &z_test)?
                }
                Classifier::Ns => {
                    let model = ns_fit(&z_train, &y_train, rank_threshold)?;
                    ns_predict(&model, &z_test)?
                }
                Classifier::Lns => {
                    local_ns_predict(&z_train, &y_train, &z_test, k_nn, rank_threshold)?
                }
            };
            let m = classification_metrics(&pred, &y_test)?;
            per_classifier[ci].push((m.accuracy, m.balanced_accuracy));
        }
        log::info!(
            "split {}/{}: k = {}{}",
            split + 1,
            args.splits,
            pca.k,
            classifiers
                .iter()
                .zip(&per_classifier)
                .map(|(c, r)| format!(", {} {:.3}", c.name(), r[split].0))
                .collect::<String>()
        );
    }

    let mut results = Vec::with_capacity(classifiers.len());
    println!("{:<12} {:<20} {:<20}", "Classifier", "ACC", "Balanced acc");
    for (classifier, rows) in classifiers.iter().zip(&per_classifier) {
        let accs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let bals: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let (am, astd) = util::mean_std(&accs);
        let (bm, bstd) = util::mean_std(&bals);
        println!(
            "{:<12} {:<20} {:<20}",
            classifier.name().to_uppercase(),
            format!("{am:.4} +- {astd:.4}"),
            format!("{bm:.4} +- {bstd:.4}")
        );
        results.push(ClassifierSummary {
            classifier: classifier.name(),
            accuracy_mean: am,
            accuracy_std: astd,
            balanced_accuracy_mean: bm,
            balanced_accuracy_std: bstd,
            per_split: rows
                .iter()
                .enumerate()
                .map(|(s, r)| SplitMetrics {
                    split: s,
                    accuracy: r.0,
                    balanced_accuracy: r.1,
                })
                .collect(),
        });
    }

    let metrics = EvaluateMetrics {
        splits: args.splits,
        train_size: args.train_size,
        test_size: args.test_size,
        seed,
        variance_threshold: var,
        stratified: true,
        all_converged: result.all_converged(),
        solves_performed: result.solves_performed,
        results,
    };
    fs::write(
        args.out.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    util::write_run_manifest(
        &args.out,
        "evaluate",
        &[("manifest", args.manifest.as_path())],
        &serde_json::json!({
            "solver": cfg.solver,
            "splits": args.splits,
            "train_size": args.train_size,
            "test_size": args.test_size,
            "seed": seed,
            "variance_threshold": var,
            "rank_threshold": rank_threshold,
            "k_nn": k_nn,
            "alpha": args.alpha.or(cfg.alpha),
            "workers": workers,
            "normalized": args.normalized,
            "classifiers": classifiers.iter().map(|c| c.name()).collect::<Vec<_>>(),
        }),
        None,
    )?;
    Ok(if result.all_converged() { 0 } else { 2 })
}
