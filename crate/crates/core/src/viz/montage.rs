//! Slice montages: one captioned panel per volume, shared intensity window,
//! nearest-neighbor upscaling, 8-bit grayscale PNG output.

use std::path::Path;

use super::canvas::Canvas;
use super::font;
use crate::grid::DensityVolume;
use crate::{Error, Result};

/// Anatomical slicing axis, indexing the first, second, or third grid
/// dimension respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceAxis {
    X,
    Y,
    Z,
}

impl SliceAxis {
    pub fn index(self) -> usize {
        match self {
            SliceAxis::X => 0,
            SliceAxis::Y => 1,
            SliceAxis::Z => 2,
        }
    }

    pub fn parse(s: &str) -> Result<SliceAxis> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(SliceAxis::X),
            "y" => Ok(SliceAxis::Y),
            "z" => Ok(SliceAxis::Z),
            other => Err(Error::InvalidParameter {
                name: "axis",
                reason: format!("expected x, y, or z, got {other:?}"),
            }),
        }
    }
}

/// Upscaling factor from voxels to panel pixels.
const SCALE: usize = 4;
/// Caption strip height below each panel, in pixels.
const CAPTION_H: usize = 18;
/// Gap between adjacent panels, in pixels.
const GAP: usize = 2;

/// The slice a montage shows by default: the volume's center-of-mass
/// coordinate along `axis`, rounded to the nearest plane.
pub fn default_slice(volume: &DensityVolume, axis: SliceAxis) -> usize {
    let a = axis.index();
    let max = volume.grid().dims()[a] - 1;
    (volume.center_of_mass()[a].round().max(0.0) as usize).min(max)
}

/// In-plane dimensions of a slice along `axis`: (rows, cols).
fn plane_dims(dims: [usize; 3], axis: SliceAxis) -> (usize, usize) {
    match axis {
        SliceAxis::X => (dims[1], dims[2]),
        SliceAxis::Y => (dims[0], dims[2]),
        SliceAxis::Z => (dims[0], dims[1]),
    }
}

/// Extract the `s`-th plane of `volume` along `axis`, row-major.
fn extract_slice(volume: &DensityVolume, axis: SliceAxis, s: usize) -> Vec<f64> {
    let grid = volume.grid();
    let dims = grid.dims();
    let (rows, cols) = plane_dims(dims, axis);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let idx = match axis {
                SliceAxis::X => grid.index(s, r, c),
                SliceAxis::Y => grid.index(r, s, c),
                SliceAxis::Z => grid.index(r, c, s),
            };
            out.push(volume.values()[idx]);
        }
    }
    out
}

/// Render a captioned multi-panel slice montage and write it as a PNG.
///
/// All volumes must share a grid. `slice_index` defaults to the
/// center-of-mass plane of the first volume. Intensities are windowed to the
/// shared min/max over every panel so differences in shape, not in per-panel
/// contrast, dominate the figure.
pub fn emit_montage(
    volumes: &[DensityVolume],
    captions: &[String],
    axis: SliceAxis,
    slice_index: Option<usize>,
    out_path: &Path,
) -> Result<()> {
    if volumes.is_empty() {
        return Err(Error::EmptyInput { what: "montage volumes" });
    }
    if captions.len() != volumes.len() {
        return Err(Error::DimMismatch {
            context: "montage captions",
            expected: volumes.len(),
            got: captions.len(),
        });
    }
    let grid = volumes[0].grid();
    for v in volumes {
        if v.grid() != grid {
            return Err(Error::grid_mismatch(grid, v.grid()));
        }
    }
    let a = axis.index();
    let s = match slice_index {
        Some(s) if s >= grid.dims()[a] => {
            return Err(Error::InvalidParameter {
                name: "slice_index",
                reason: format!("slice {s} out of range for axis size {}", grid.dims()[a]),
            });
        }
        Some(s) => s,
        None => default_slice(&volumes[0], axis),
    };

    let slices: Vec<Vec<f64>> = volumes.iter().map(|v| extract_slice(v, axis, s)).collect();
    let (rows, cols) = plane_dims(grid.dims(), axis);

    // Shared intensity window over every panel.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for sl in &slices {
        for &v in sl {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = hi - lo;

    let pw = cols * SCALE;
    let ph = rows * SCALE;
    let n = volumes.len();
    let mut canvas = Canvas::new(n * pw + (n - 1) * GAP, ph + CAPTION_H, 0);

    for (p, sl) in slices.iter().enumerate() {
        let x0 = (p * (pw + GAP)) as isize;
        for r in 0..rows {
            for c in 0..cols {
                let v = sl[r * cols + c];
                let shade = if span > 0.0 {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    128
                };
                canvas.fill_rect(
                    x0 + (c * SCALE) as isize,
                    (r * SCALE) as isize,
                    SCALE,
                    SCALE,
                    shade,
                );
            }
        }
        let caption = &captions[p];
        let scale = if font::text_width(caption, 2) <= pw { 2 } else { 1 };
        let tw = font::text_width(caption, scale) as isize;
        let tx = x0 + ((pw as isize - tw) / 2).max(0);
        let ty = (ph + (CAPTION_H - font::GLYPH_H * scale) / 2) as isize;
        canvas.text(tx, ty, caption, scale, 255);
        if p + 1 < n {
            canvas.fill_rect(x0 + pw as isize, 0, GAP, ph + CAPTION_H, 64);
        }
    }

    canvas.save(out_path)
}
