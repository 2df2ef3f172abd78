//! Zero-padded `k×k` convolution and its raster-scan back substitution.
//!
//! Weights are stored `[a][b][ci][co]`, row-major. With padding
//! `(t, b, l, r)` and `t + b = l + r = k − 1` the output has the input's
//! spatial size and tap `(t, l)` couples each output pixel to the input
//! pixel at the same position.

use super::linalg::SmallLu;
use crate::{PadSpec, Real, Result, Tensor};

#[inline]
pub(crate) fn widx(k: usize, cin: usize, cout: usize, a: usize, b: usize, ci: usize, co: usize) -> usize {
    (((a * k + b) * cin + ci) * cout) + co
}

/// `y[i, j, co] = Σ_{a,b<k} Σ_ci pad(x)[i + a, j + b, ci] · w[a, b, ci, co]`.
pub(crate) fn conv2d(x: &Tensor, w: &[Real], k: usize, cout: usize, pad: PadSpec) -> Tensor {
    let (h, wd, cin) = x.dims3().expect("conv2d expects an image");
    debug_assert_eq!(w.len(), k * k * cin * cout);
    let oh = h + pad.top + pad.bottom + 1 - k;
    let ow = wd + pad.left + pad.right + 1 - k;
    let xd = x.data();
    let mut out = vec![0.0; oh * ow * cout];
    for i in 0..oh {
        for j in 0..ow {
            let dst = &mut out[(i * ow + j) * cout..(i * ow + j + 1) * cout];
            for a in 0..k {
                let ii = i + a;
                if ii < pad.top || ii - pad.top >= h {
                    continue;
                }
                let si = ii - pad.top;
                for b in 0..k {
                    let jj = j + b;
                    if jj < pad.left || jj - pad.left >= wd {
                        continue;
                    }
                    let sj = jj - pad.left;
                    let src = &xd[(si * wd + sj) * cin..(si * wd + sj + 1) * cin];
                    let tap = &w[widx(k, cin, cout, a, b, 0, 0)..widx(k, cin, cout, a, b + 1, 0, 0)];
                    for (ci, &xv) in src.iter().enumerate() {
                        let row = &tap[ci * cout..(ci + 1) * cout];
                        for (d, &wv) in dst.iter_mut().zip(row) {
                            *d += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[oh, ow, cout], out).unwrap()
}

/// Pixel visiting order of a back substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ScanOrder {
    Raster,
    ReverseRaster,
}

/// How the per-pixel system `x · D = r` is solved, `D[ci, co]` being the
/// center tap.
#[derive(Debug, Clone)]
pub(crate) enum CenterSolve {
    /// `D[ci, co] = 0` for `ci > co`: channels resolved in increasing order.
    Ascending(Vec<Real>),
    /// `D[ci, co] = 0` for `ci < co`: channels resolved in decreasing order.
    Descending(Vec<Real>),
    /// Full block, solved through an LU factorization of `Dᵀ`.
    Lu(SmallLu),
}

impl CenterSolve {
    #[inline]
    fn solve(&self, r: &[Real], x: &mut [Real]) {
        let c = r.len();
        match self {
            CenterSolve::Ascending(d) => {
                for co in 0..c {
                    let mut s = r[co];
                    for ci in 0..co {
                        s -= x[ci] * d[ci * c + co];
                    }
                    x[co] = s / d[co * c + co];
                }
            }
            CenterSolve::Descending(d) => {
                for co in (0..c).rev() {
                    let mut s = r[co];
                    for ci in co + 1..c {
                        s -= x[ci] * d[ci * c + co];
                    }
                    x[co] = s / d[co * c + co];
                }
            }
            CenterSolve::Lu(lu) => lu.solve_into(r, x),
        }
    }
}

/// Inverts a same-size padded convolution whose output at each pixel only
/// reads input pixels that precede it in `order`.
///
/// Every tap of the window is visited, masked or not; pixels that are not
/// yet recovered are still zero in the output buffer.
pub(crate) fn back_substitute(
    y: &Tensor,
    w: &[Real],
    k: usize,
    pad: PadSpec,
    order: ScanOrder,
    center: &CenterSolve,
) -> Result<Tensor> {
    let (h, wd, c) = y.dims3()?;
    debug_assert_eq!(pad.top + pad.bottom, k - 1);
    debug_assert_eq!(pad.left + pad.right, k - 1);
    let yd = y.data();
    let mut x = vec![0.0; h * wd * c];
    let mut r = vec![0.0; c];
    let mut sol = vec![0.0; c];
    let npx = h * wd;
    for step in 0..npx {
        let p = match order {
            ScanOrder::Raster => step,
            ScanOrder::ReverseRaster => npx - 1 - step,
        };
        let (i, j) = (p / wd, p % wd);
        r.copy_from_slice(&yd[p * c..(p + 1) * c]);
        for a in 0..k {
            let ii = i + a;
            if ii < pad.top || ii - pad.top >= h {
                continue;
            }
            let si = ii - pad.top;
            for b in 0..k {
                if a == pad.top && b == pad.left {
                    continue;
                }
                let jj = j + b;
                if jj < pad.left || jj - pad.left >= wd {
                    continue;
                }
                let sj = jj - pad.left;
                let src = &x[(si * wd + sj) * c..(si * wd + sj + 1) * c];
                let tap = &w[widx(k, c, c, a, b, 0, 0)..widx(k, c, c, a, b + 1, 0, 0)];
                for (ci, &xv) in src.iter().enumerate() {
                    let row = &tap[ci * c..(ci + 1) * c];
                    for (rv, &wv) in r.iter_mut().zip(row) {
                        *rv -= xv * wv;
                    }
                }
            }
        }
        center.solve(&r, &mut sol);
        x[p * c..(p + 1) * c].copy_from_slice(&sol);
    }
    Tensor::new(&[h, wd, c], x)
}

/// Gradient of a padded convolution with respect to its input:
/// `gx[si, sj, ci] = Σ gy[i, j, co] · w[a, b, ci, co]` over all `(i, j, a, b)`
/// that read `(si, sj)`.
pub(crate) fn conv2d_input_grad(
    gy: &Tensor,
    w: &[Real],
    k: usize,
    cin: usize,
    in_hw: (usize, usize),
    pad: PadSpec,
) -> Tensor {
    let (oh, ow, cout) = gy.dims3().expect("gradient image");
    let (h, wd) = in_hw;
    let gyd = gy.data();
    let mut gx = vec![0.0; h * wd * cin];
    for i in 0..oh {
        for j in 0..ow {
            let g = &gyd[(i * ow + j) * cout..(i * ow + j + 1) * cout];
            for a in 0..k {
                let ii = i + a;
                if ii < pad.top || ii - pad.top >= h {
                    continue;
                }
                let si = ii - pad.top;
                for b in 0..k {
                    let jj = j + b;
                    if jj < pad.left || jj - pad.left >= wd {
                        continue;
                    }
                    let sj = jj - pad.left;
                    let dst = &mut gx[(si * wd + sj) * cin..(si * wd + sj + 1) * cin];
                    let tap = &w[widx(k, cin, cout, a, b, 0, 0)..widx(k, cin, cout, a, b + 1, 0, 0)];
                    for (ci, d) in dst.iter_mut().enumerate() {
                        let row = &tap[ci * cout..(ci + 1) * cout];
                        *d += row.iter().zip(g).map(|(wv, gv)| wv * gv).sum::<Real>();
                    }
                }
            }
        }
    }
    Tensor::new(&[h, wd, cin], gx).unwrap()
}

/// Accumulates the weight gradient `gw[a, b, ci, co] += Σ_{i,j} pad(x)[i + a, j + b, ci] · gy[i, j, co]`.
pub(crate) fn conv2d_weight_grad(x: &Tensor, gy: &Tensor, k: usize, pad: PadSpec, gw: &mut [Real]) {
    let (h, wd, cin) = x.dims3().expect("input image");
    let (oh, ow, cout) = gy.dims3().expect("gradient image");
    debug_assert_eq!(gw.len(), k * k * cin * cout);
    let xd = x.data();
    let gyd = gy.data();
    for i in 0..oh {
        for j in 0..ow {
            let g = &gyd[(i * ow + j) * cout..(i * ow + j + 1) * cout];
            for a in 0..k {
                let ii = i + a;
                if ii < pad.top || ii - pad.top >= h {
                    continue;
                }
                let si = ii - pad.top;
                for b in 0..k {
                    let jj = j + b;
                    if jj < pad.left || jj - pad.left >= wd {
                        continue;
                    }
                    let sj = jj - pad.left;
                    let src = &xd[(si * wd + sj) * cin..(si * wd + sj + 1) * cin];
                    let base = widx(k, cin, cout, a, b, 0, 0);
                    for (ci, &xv) in src.iter().enumerate() {
                        let row = &mut gw[base + ci * cout..base + (ci + 1) * cout];
                        for (d, &gv) in row.iter_mut().zip(g) {
                            *d += xv * gv;
                        }
                    }
                }
            }
        }
    }
}
