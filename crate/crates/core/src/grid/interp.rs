//! Trilinear interpolation with clamp-to-edge boundary handling.

use super::GridSpec;

/// Clamp `p` to the grid's coordinate box `[0, n-1]` per axis and split into
/// base cell index, fractional offset, and a per-axis "was clamped" flag.
#[inline]
fn locate(n: usize, p: f64) -> (usize, f64, bool) {
    let max = (n - 1) as f64;
    if p <= 0.0 {
        (0, 0.0, p < 0.0)
    } else if p >= max {
        // Anchor the last sample to the top of the last cell so the weight
        // formula below still reads valid indices.
        if n >= 2 {
            (n - 2, 1.0, p > max)
        } else {
            (0, 0.0, p > max)
        }
    } else {
        let base = p.floor();
        (base as usize, p - base, false)
    }
}

/// Trilinear sample of `values` (flat C-order on `grid`) at point `p`.
/// Points outside the grid are clamped to the boundary value.
pub fn trilinear(values: &[f64], grid: &GridSpec, p: [f64; 3]) -> f64 {
    trilinear_with_grad(values, grid, p).0
}

/// Trilinear sample and its gradient with respect to the sample point.
///
/// The gradient is the exact derivative of the clamped interpolant: where a
/// coordinate is clamped the interpolant is constant in that direction, so
/// that component is zero.
pub fn trilinear_with_grad(values: &[f64], grid: &GridSpec, p: [f64; 3]) -> (f64, [f64; 3]) {
    let [h, w, d] = grid.dims();
    let (i0, fi, ci) = locate(h, p[0]);
    let (j0, fj, cj) = locate(w, p[1]);
    let (k0, fk, ck) = locate(d, p[2]);

    let i1 = (i0 + 1).min(h - 1);
    let j1 = (j0 + 1).min(w - 1);
    let k1 = (k0 + 1).min(d - 1);

    let c = |i: usize, j: usize, k: usize| values[grid.index(i, j, k)];

    let c000 = c(i0, j0, k0);
    let c001 = c(i0, j0, k1);
    let c010 = c(i0, j1, k0);
    let c011 = c(i0, j1, k1);
    let c100 = c(i1, j0, k0);
    let c101 = c(i1, j0, k1);
    let c110 = c(i1, j1, k0);
    let c111 = c(i1, j1, k1);

    // Collapse the k axis, then j, then i, keeping enough intermediates to
    // read off the partial derivatives.
    let c00 = c000 + (c001 - c000) * fk;
    let c01 = c010 + (c011 - c010) * fk;
    let c10 = c100 + (c101 - c100) * fk;
    let c11 = c110 + (c111 - c110) * fk;

    let c0 = c00 + (c01 - c00) * fj;
    let c1 = c10 + (c11 - c10) * fj;

    let value = c0 + (c1 - c0) * fi;

    let gi = if ci { 0.0 } else { c1 - c0 };
    let gj = if cj {
        0.0
    } else {
        (c01 - c00) + ((c11 - c10) - (c01 - c00)) * fi
    };
    let gk = if ck {
        0.0
    } else {
        let dk0 = c001 - c000 + ((c011 - c010) - (c001 - c000)) * fj;
        let dk1 = c101 - c100 + ((c111 - c110) - (c101 - c100)) * fj;
        dk0 + (dk1 - dk0) * fi
    };

    (value, [gi, gj, gk])
}

/// Trilinear sample and gradient treating the grid as zero outside its box.
///
/// This is trilinear interpolation on the lattice padded with zeros: the
/// value decays linearly to zero across the first voxel beyond each face and
/// vanishes past that, and the gradient is the exact derivative of that
/// interpolant. Densities are zero outside the recorded volume, so this is
/// the faithful extension when a sample point may escape the domain.
pub(crate) fn trilinear_zero_with_grad(
    values: &[f64],
    grid: &GridSpec,
    p: [f64; 3],
) -> (f64, [f64; 3]) {
    let [h, w, d] = grid.dims();
    let dims = [h as isize, w as isize, d as isize];
    let mut base = [0isize; 3];
    let mut frac = [0.0f64; 3];
    for axis in 0..3 {
        // Entirely outside the padded support: value and gradient vanish.
        if p[axis] <= -1.0 || p[axis] >= dims[axis] as f64 {
            return (0.0, [0.0; 3]);
        }
        let b = p[axis].floor();
        base[axis] = b as isize;
        frac[axis] = p[axis] - b;
    }
    let at = |i: isize, j: isize, k: isize| -> f64 {
        if i < 0 || j < 0 || k < 0 || i >= dims[0] || j >= dims[1] || k >= dims[2] {
            0.0
        } else {
            values[grid.index(i as usize, j as usize, k as usize)]
        }
    };
    let (i0, j0, k0) = (base[0], base[1], base[2]);
    let (fi, fj, fk) = (frac[0], frac[1], frac[2]);

    let c000 = at(i0, j0, k0);
    let c001 = at(i0, j0, k0 + 1);
    let c010 = at(i0, j0 + 1, k0);
    let c011 = at(i0, j0 + 1, k0 + 1);
    let c100 = at(i0 + 1, j0, k0);
    let c101 = at(i0 + 1, j0, k0 + 1);
    let c110 = at(i0 + 1, j0 + 1, k0);
    let c111 = at(i0 + 1, j0 + 1, k0 + 1);

    let c00 = c000 + (c001 - c000) * fk;
    let c01 = c010 + (c011 - c010) * fk;
    let c10 = c100 + (c101 - c100) * fk;
    let c11 = c110 + (c111 - c110) * fk;

    let c0 = c00 + (c01 - c00) * fj;
    let c1 = c10 + (c11 - c10) * fj;

    let value = c0 + (c1 - c0) * fi;
    let gi = c1 - c0;
    let gj = (c01 - c00) + ((c11 - c10) - (c01 - c00)) * fi;
    let dk0 = c001 - c000 + ((c011 - c010) - (c001 - c000)) * fj;
    let dk1 = c101 - c100 + ((c111 - c110) - (c101 - c100)) * fj;
    let gk = dk0 + (dk1 - dk0) * fi;

    (value, [gi, gj, gk])
}
