//! Separable resampling between grids of different resolution.
//!
//! Each axis is handled independently. Shrinking an axis averages source
//! cells weighted by interval overlap (a box filter over the cells a target
//! voxel covers); growing an axis interpolates linearly at the positions the
//! extent-preserving affine map sends target voxel centers to. Both choices
//! keep constants constant, and the box filter keeps them alias-free.

use super::GridSpec;
use crate::Result;

/// Sparse 1D resampling row: `(source index, weight)` pairs per target index.
type WeightRows = Vec<Vec<(usize, f64)>>;

/// Weights for shrinking an axis from `src_n` to `dst_n` cells by interval
/// overlap. Each target cell of width `s = src_n / dst_n` source cells
/// averages the source cells it covers, so each row's weights sum to 1.
fn shrink_rows(src_n: usize, dst_n: usize) -> WeightRows {
    let s = src_n as f64 / dst_n as f64;
    (0..dst_n)
        .map(|t| {
            let lo = t as f64 * s;
            let hi = (t as f64 + 1.0) * s;
            let first = lo.floor() as usize;
            let last = ((hi.ceil() as usize).min(src_n)).max(first + 1);
            let mut row = Vec::with_capacity(last - first);
            for u in first..last {
                let overlap = (hi.min(u as f64 + 1.0) - lo.max(u as f64)).max(0.0);
                if overlap > 0.0 {
                    row.push((u, overlap / s));
                }
            }
            row
        })
        .collect()
}

/// Weights for growing an axis from `src_n` to `dst_n` cells by linear
/// interpolation at mapped target centers. The outermost target centers fall
/// slightly outside the source sample range; they are extrapolated from the
/// nearest cell so affine data (identity coordinate fields in particular)
/// resamples exactly. Densities clamp any resulting negatives afterwards.
fn grow_rows(src_n: usize, dst_n: usize) -> WeightRows {
    let s = src_n as f64 / dst_n as f64;
    let off = (s - 1.0) / 2.0;
    (0..dst_n)
        .map(|t| {
            let x = s * t as f64 + off;
            if src_n == 1 {
                return vec![(0, 1.0)];
            }
            let base = (x.floor() as isize).clamp(0, src_n as isize - 2) as usize;
            let frac = x - base as f64;
            vec![(base, 1.0 - frac), (base + 1, frac)]
        })
        .collect()
}

/// Apply 1D weight rows along `axis` of a C-order array with extents `dims`.
fn apply_axis(values: &[f64], dims: [usize; 3], axis: usize, rows: &WeightRows) -> Vec<f64> {
    let new_n = rows.len();
    let mut out_dims = dims;
    out_dims[axis] = new_n;
    let mut out = vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]];

    let src_stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let dst_stride = match axis {
        0 => out_dims[1] * out_dims[2],
        1 => out_dims[2],
        _ => 1,
    };

    // Iterate the two fixed axes; walk the resampled axis via strides.
    let (fix_a, fix_b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for a in 0..dims[fix_a] {
        for b in 0..dims[fix_b] {
            let mut src_base = [0usize; 3];
            src_base[fix_a] = a;
            src_base[fix_b] = b;
            let src0 = (src_base[0] * dims[1] + src_base[1]) * dims[2] + src_base[2];
            let dst0 =
                (src_base[0] * out_dims[1] + src_base[1]) * out_dims[2] + src_base[2];
            for (t, row) in rows.iter().enumerate() {
                let mut acc = 0.0;
                for &(u, wgt) in row {
                    acc += wgt * values[src0 + u * src_stride];
                }
                out[dst0 + t * dst_stride] = acc;
            }
        }
    }
    out
}

/// Resample a flat C-order array from `src` to `dst` extents, axis by axis.
/// Mixed directions are fine (an axis can shrink while another grows).
pub fn resample_values(values: &[f64], src: &GridSpec, dst: &GridSpec) -> Result<Vec<f64>> {
    let mut dims = src.dims();
    let target = dst.dims();
    let mut data = values.to_vec();
    for axis in 0..3 {
        if target[axis] == dims[axis] {
            continue;
        }
        let rows = if target[axis] < dims[axis] {
            shrink_rows(dims[axis], target[axis])
        } else {
            grow_rows(dims[axis], target[axis])
        };
        data = apply_axis(&data, dims, axis, &rows);
        dims[axis] = target[axis];
    }
    Ok(data)
}
