//! Score-space figures: per-class projection histograms with Gaussian
//! overlays, ROC curves, and confusion-matrix heat grids.

use std::path::Path;

use super::canvas::Canvas;
use super::font;
use crate::stats::{auroc, classification_metrics};
use crate::{Error, Result};

const INK: u8 = 0;
const BG: u8 = 255;
const GRID_SHADE: u8 = 210;
/// Per-class bar shades, cycled when there are more classes than entries.
const CLASS_SHADES: [u8; 4] = [180, 110, 150, 80];

/// Compact fixed-point formatting for axis labels and annotations.
fn fmt(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    let s = if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    };
    let t = s.trim_end_matches('0').trim_end_matches('.');
    if t.is_empty() { "0".into() } else { t.to_string() }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn sorted_classes(labels: &[f64]) -> Vec<f64> {
    let mut cs: Vec<f64> = labels.to_vec();
    cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cs.dedup();
    cs
}

struct Panel {
    x: isize,
    y: isize,
    w: usize,
    h: usize,
}

impl Panel {
    /// Map a data point to pixel coordinates; y grows upward in data space.
    fn to_px(&self, fx: f64, fy: f64) -> (isize, isize) {
        let px = self.x + (fx * (self.w - 1) as f64).round() as isize;
        let py = self.y + self.h as isize - 1 - (fy * (self.h - 1) as f64).round() as isize;
        (px, py)
    }
}

/// Histogram bar heights for one class over a fixed range.
fn histogram(scores: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    let span = hi - lo;
    if span <= 0.0 {
        return counts;
    }
    for &s in scores {
        let b = (((s - lo) / span) * bins as f64).floor() as isize;
        let b = b.clamp(0, bins as isize - 1) as usize;
        counts[b] += 1;
    }
    counts
}

/// Draw one per-class histogram panel with Gaussian-fit overlays.
fn draw_score_panel(
    canvas: &mut Canvas,
    panel: &Panel,
    title: &str,
    scores: &[f64],
    labels: &[f64],
    classes: &[f64],
    lo: f64,
    hi: f64,
    bins: usize,
) {
    canvas.frame(panel.x, panel.y, panel.w, panel.h, INK);
    canvas.text(panel.x + 4, panel.y - 10, title, 1, INK);
    if scores.is_empty() || hi <= lo {
        canvas.text(panel.x + 8, panel.y + 8, "NO DATA", 1, INK);
        return;
    }

    let per_class: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            scores
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(&s, _)| s)
                .collect()
        })
        .collect();
    let hists: Vec<Vec<usize>> = per_class.iter().map(|s| histogram(s, lo, hi, bins)).collect();
    let peak = hists
        .iter()
        .flat_map(|h| h.iter().copied())
        .max()
        .unwrap_or(0)
        .max(1) as f64;

    // Bars, rendered with the darkening rule so class overlap compounds.
    for (ci, hist) in hists.iter().enumerate() {
        let shade = CLASS_SHADES[ci % CLASS_SHADES.len()];
        for (b, &count) in hist.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let fx0 = b as f64 / bins as f64;
            let fx1 = (b + 1) as f64 / bins as f64;
            let fy = count as f64 / peak * 0.92;
            let (x0, y0) = panel.to_px(fx0, fy);
            let (x1, base) = panel.to_px(fx1, 0.0);
            canvas.darken_rect(x0 + 1, y0, (x1 - x0 - 1).max(1) as usize, (base - y0) as usize, shade);
        }
    }

    // Gaussian fits: mean/std per class, scaled to expected bin counts.
    let bin_w = (hi - lo) / bins as f64;
    for (ci, class_scores) in per_class.iter().enumerate() {
        if class_scores.len() < 2 {
            continue;
        }
        let (mu, sd) = mean_std(class_scores);
        if sd <= 0.0 {
            continue;
        }
        let norm = class_scores.len() as f64 * bin_w / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let mut last: Option<(isize, isize)> = None;
        for px in 0..panel.w {
            let fx = px as f64 / (panel.w - 1) as f64;
            let s = lo + fx * (hi - lo);
            let y = norm * (-0.5 * ((s - mu) / sd).powi(2)).exp();
            let fy = (y / peak * 0.92).min(1.0);
            let pt = panel.to_px(fx, fy);
            if let Some(prev) = last {
                canvas.line(prev.0, prev.1, pt.0, pt.1, INK);
            }
            last = Some(pt);
        }
        let label = format!("{}: M={} S={}", fmt(classes[ci]), fmt(mu), fmt(sd));
        canvas.text(
            panel.x + panel.w as isize - font::text_width(&label, 1) as isize - 3,
            panel.y + 3 + 9 * ci as isize,
            &label,
            1,
            INK,
        );
    }

    // Range labels under the baseline.
    canvas.text(panel.x, panel.y + panel.h as isize + 3, &fmt(lo), 1, INK);
    let hi_s = fmt(hi);
    canvas.text(
        panel.x + panel.w as isize - font::text_width(&hi_s, 1) as isize,
        panel.y + panel.h as isize + 3,
        &hi_s,
        1,
        INK,
    );
}

/// Emit stacked train/test projection histograms with per-class Gaussian
/// overlays annotated with each class mean and standard deviation.
pub fn emit_projection_plot(
    scores_train: &[f64],
    labels_train: &[f64],
    scores_test: &[f64],
    labels_test: &[f64],
    out_path: &Path,
) -> Result<()> {
    if scores_train.len() != labels_train.len() {
        return Err(Error::DimMismatch {
            context: "train scores vs labels",
            expected: scores_train.len(),
            got: labels_train.len(),
        });
    }
    if scores_test.len() != labels_test.len() {
        return Err(Error::DimMismatch {
            context: "test scores vs labels",
            expected: scores_test.len(),
            got: labels_test.len(),
        });
    }
    if scores_train.is_empty() {
        return Err(Error::EmptyInput { what: "train scores" });
    }

    let mut all_labels = labels_train.to_vec();
    all_labels.extend_from_slice(labels_test);
    let classes = sorted_classes(&all_labels);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &s in scores_train.iter().chain(scores_test) {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    let pad = 0.05 * (hi - lo).max(1e-12);
    let (lo, hi) = (lo - pad, hi + pad);
    let bins = 24;

    let mut canvas = Canvas::new(640, 480, BG);
    let top = Panel { x: 48, y: 26, w: 560, h: 190 };
    let bottom = Panel { x: 48, y: 258, w: 560, h: 190 };
    draw_score_panel(
        &mut canvas, &top, "TRAIN", scores_train, labels_train, &classes, lo, hi, bins,
    );
    draw_score_panel(
        &mut canvas, &bottom, "TEST", scores_test, labels_test, &classes, lo, hi, bins,
    );
    canvas.save(out_path)
}

/// ROC polyline via threshold sweep over the sorted scores; tied scores move
/// as one block so the curve area equals the rank-statistic AUROC.
fn roc_points(scores: &[f64], truth: &[f64], positive: f64) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let n_pos = truth.iter().filter(|&&t| t == positive).count();
    let n_neg = truth.len() - n_pos;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if truth[order[j]] == positive {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j;
    }
    points
}

/// Emit an ROC curve with the AUROC annotated. Requires binary labels; the
/// higher class code is the positive class.
pub fn emit_roc(scores: &[f64], truth: &[f64], out_path: &Path) -> Result<()> {
    let auc = auroc(scores, truth)?;
    let classes = sorted_classes(truth);
    let positive = classes[1];
    let points = roc_points(scores, truth, positive);

    let mut canvas = Canvas::new(480, 480, BG);
    let panel = Panel { x: 52, y: 40, w: 380, h: 380 };
    canvas.frame(panel.x, panel.y, panel.w, panel.h, INK);

    // Reference diagonal and quarter gridlines.
    for q in 1..4 {
        let f = q as f64 / 4.0;
        let (x, _) = panel.to_px(f, 0.0);
        let (_, y) = panel.to_px(0.0, f);
        canvas.line(x, panel.y + 1, x, panel.y + panel.h as isize - 2, GRID_SHADE);
        canvas.line(panel.x + 1, y, panel.x + panel.w as isize - 2, y, GRID_SHADE);
    }
    let (dx0, dy0) = panel.to_px(0.0, 0.0);
    let (dx1, dy1) = panel.to_px(1.0, 1.0);
    canvas.line(dx0, dy0, dx1, dy1, 170);

    for w in points.windows(2) {
        let (x0, y0) = panel.to_px(w[0].0, w[0].1);
        let (x1, y1) = panel.to_px(w[1].0, w[1].1);
        canvas.line(x0, y0, x1, y1, INK);
        canvas.line(x0, y0 - 1, x1, y1 - 1, INK);
    }

    canvas.text(panel.x + 8, panel.y + 8, &format!("AUC={auc:.4}"), 2, INK);
    canvas.text(panel.x + panel.w as isize / 2 - 12, panel.y + panel.h as isize + 10, "FPR", 1, INK);
    canvas.text(panel.x - 40, panel.y + panel.h as isize / 2, "TPR", 1, INK);
    canvas.text(panel.x - 8, panel.y + panel.h as isize + 3, "0", 1, INK);
    canvas.text(panel.x + panel.w as isize - 4, panel.y + panel.h as isize + 3, "1", 1, INK);
    canvas.save(out_path)
}

/// Emit a confusion-matrix heat grid titled with accuracy and balanced
/// accuracy. Rows are true classes, columns predicted.
pub fn emit_confusion(pred: &[f64], truth: &[f64], out_path: &Path) -> Result<()> {
    let m = classification_metrics(pred, truth)?;
    let n = m.classes.len();
    let cell: usize = (360 / n.max(1)).clamp(36, 120);
    let origin_x: isize = 70;
    let origin_y: isize = 56;
    let grid_px = n * cell;
    let mut canvas = Canvas::new(
        (origin_x as usize + grid_px + 30).max(360),
        origin_y as usize + grid_px + 40,
        BG,
    );

    let title = format!(
        "ACC={:.3} BAL={:.3}",
        m.accuracy, m.balanced_accuracy
    );
    canvas.text(origin_x, 14, &title, 2, INK);

    let max_count = m
        .confusion_matrix
        .iter()
        .flat_map(|r| r.iter().copied())
        .max()
        .unwrap_or(0)
        .max(1) as f64;

    for (r, row) in m.confusion_matrix.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            let x = origin_x + (c * cell) as isize;
            let y = origin_y + (r * cell) as isize;
            let frac = count as f64 / max_count;
            let shade = (BG as f64 - 175.0 * frac).round() as u8;
            canvas.fill_rect(x, y, cell, cell, shade);
            canvas.frame(x, y, cell, cell, INK);
            let label = count.to_string();
            let ink = if shade < 128 { BG } else { INK };
            let tw = font::text_width(&label, 2) as isize;
            canvas.text(x + (cell as isize - tw) / 2, y + cell as isize / 2 - 7, &label, 2, ink);
        }
    }

    for (i, class) in m.classes.iter().enumerate() {
        let name = fmt(*class);
        let tw = font::text_width(&name, 1) as isize;
        // Column header (predicted) and row label (true).
        canvas.text(
            origin_x + (i * cell) as isize + (cell as isize - tw) / 2,
            origin_y - 12,
            &name,
            1,
            INK,
        );
        canvas.text(
            origin_x - tw - 8,
            origin_y + (i * cell) as isize + cell as isize / 2 - 3,
            &name,
            1,
            INK,
        );
    }
    canvas.text(origin_x + grid_px as isize / 2 - 12, origin_y - 24, "PRED", 1, INK);
    canvas.text(origin_x - 46, origin_y + grid_px as isize / 2, "TRUE", 1, INK);
    canvas.save(out_path)
}
