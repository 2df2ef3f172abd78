//! Unconstrained parameterization that keeps a kernel invertible.
//!
//! The diagonal of the center tap is `sign_c · exp(θ_c)` with the signs
//! frozen at initialization, so no optimizer step can reach a zero diagonal.
//! For the block variant the center tap is `D = L·U` with `L` unit lower
//! triangular and `U` upper triangular carrying that diagonal, hence
//! `det D = Π_c sign_c · exp(θ_c)` and `ln|det M| = H·W·Σ_c θ_c`.

use rand::Rng;

use super::padded::widx;
use super::{ConvKernel, Variant};
use crate::{rng, Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InvConvParams {
    pub k: usize,
    pub channels: usize,
    pub variant: Variant,
    /// Off-center taps in weight order, then the free center entries in
    /// row-major `(ci, co)` order (`ci < co` for masked; `ci ≠ co` for block,
    /// where `ci < co` belongs to `U` and `ci > co` to `L`).
    pub free: Vec<Real>,
    /// ±1 per channel, never trained.
    pub signs: Vec<Real>,
    /// `θ_c = ln|D[c, c]|` (masked) or `ln|U[c, c]|` (block).
    pub log_diag: Vec<Real>,
}

fn center_is_free(variant: Variant, ci: usize, co: usize) -> bool {
    match variant {
        Variant::MaskedTriangular => ci < co,
        Variant::BlockTriangular => ci != co,
    }
}

impl InvConvParams {
    pub fn num_free(k: usize, channels: usize, variant: Variant) -> usize {
        let c = channels;
        let center = match variant {
            Variant::MaskedTriangular => c * (c - 1) / 2,
            Variant::BlockTriangular => c * (c - 1),
        };
        (k * k - 1) * c * c + center
    }

    /// `θ = 0`, positive signs, every free weight drawn from `N(0, std²)`.
    ///
    /// Panics unless `k` is odd and `channels` positive.
    pub fn init(k: usize, channels: usize, variant: Variant, std: Real, rng: &mut impl Rng) -> Self {
        assert!(k % 2 == 1 && channels > 0, "need an odd window and channels > 0, got k = {k}, C = {channels}");
        let free = if std == 0.0 {
            vec![0.0; Self::num_free(k, channels, variant)]
        } else {
            rng::normal_vec(rng, Self::num_free(k, channels, variant), std)
        };
        Self {
            k,
            channels,
            variant,
            free,
            signs: vec![1.0; channels],
            log_diag: vec![0.0; channels],
        }
    }

    pub fn identity(k: usize, channels: usize, variant: Variant) -> Self {
        assert!(k % 2 == 1 && channels > 0, "need an odd window and channels > 0, got k = {k}, C = {channels}");
        Self {
            k,
            channels,
            variant,
            free: vec![0.0; Self::num_free(k, channels, variant)],
            signs: vec![1.0; channels],
            log_diag: vec![0.0; channels],
        }
    }

    fn center_offset(&self) -> usize {
        (self.k * self.k - 1) * self.channels * self.channels
    }

    /// `(L, U)` of the block variant, or `(I, D)` of the masked one.
    fn factors(&self) -> (Vec<Real>, Vec<Real>) {
        let c = self.channels;
        let mut lower = vec![0.0; c * c];
        let mut upper = vec![0.0; c * c];
        let mut q = self.center_offset();
        for ci in 0..c {
            lower[ci * c + ci] = 1.0;
            upper[ci * c + ci] = self.signs[ci] * self.log_diag[ci].exp();
            for co in 0..c {
                if !center_is_free(self.variant, ci, co) {
                    continue;
                }
                if ci < co {
                    upper[ci * c + co] = self.free[q];
                } else {
                    lower[ci * c + co] = self.free[q];
                }
                q += 1;
            }
        }
        (lower, upper)
    }

    pub fn reconstruct(&self) -> ConvKernel {
        let (k, c) = (self.k, self.channels);
        let mut w = vec![0.0; k * k * c * c];
        let center = widx(k, c, c, k - 1, k - 1, 0, 0);
        w[..center].copy_from_slice(&self.free[..center]);
        let (lower, upper) = self.factors();
        let d = match self.variant {
            Variant::MaskedTriangular => upper,
            Variant::BlockTriangular => super::linalg::matmul(&lower, &upper, c),
        };
        w[center..].copy_from_slice(&d);
        ConvKernel::new(k, c, self.variant, w).expect("reconstructed kernel respects its mask")
    }

    pub fn extract(kernel: &ConvKernel) -> Result<Self> {
        let (k, c, variant) = (kernel.k(), kernel.channels(), kernel.variant());
        let center = widx(k, c, c, k - 1, k - 1, 0, 0);
        let d = kernel.diagonal_tap();
        let (lower, upper) = match variant {
            Variant::MaskedTriangular => {
                for ci in 0..c {
                    for co in 0..ci {
                        if d[ci * c + co] != 0.0 {
                            return Err(Error::MaskViolation(format!("D[{ci}, {co}] is nonzero")));
                        }
                    }
                }
                let mut eye = vec![0.0; c * c];
                (0..c).for_each(|i| eye[i * c + i] = 1.0);
                (eye, d)
            }
            Variant::BlockTriangular => doolittle(&d, c)?,
        };
        let mut free = kernel.weights()[..center].to_vec();
        let mut signs = Vec::with_capacity(c);
        let mut log_diag = Vec::with_capacity(c);
        for ci in 0..c {
            let u = upper[ci * c + ci];
            if u == 0.0 {
                return Err(Error::Singular(format!("diagonal entry {ci} is zero")));
            }
            signs.push(u.signum());
            log_diag.push(u.abs().ln());
            for co in 0..c {
                if center_is_free(variant, ci, co) {
                    free.push(if ci < co { upper[ci * c + co] } else { lower[ci * c + co] });
                }
            }
        }
        Ok(Self {
            k,
            channels: c,
            variant,
            free,
            signs,
            log_diag,
        })
    }

    /// `ln|det M|` on `h×w` images.
    pub fn logdet(&self, h: usize, w: usize) -> Real {
        (h * w) as Real * self.log_diag.iter().sum::<Real>()
    }

    /// Chain rule from a gradient over kernel weights to the free entries and
    /// `θ`, accumulated into the two output slices.
    pub fn pullback(&self, kernel_grad: &[Real], free_grad: &mut [Real], log_diag_grad: &mut [Real]) {
        let (k, c) = (self.k, self.channels);
        let center = widx(k, c, c, k - 1, k - 1, 0, 0);
        for (g, &kg) in free_grad[..center].iter_mut().zip(&kernel_grad[..center]) {
            *g += kg;
        }
        let gd = &kernel_grad[center..];
        let (lower, upper) = self.factors();
        // dD = dL·U + L·dU
        let (g_lower, g_upper) = match self.variant {
            Variant::MaskedTriangular => (vec![0.0; c * c], gd.to_vec()),
            Variant::BlockTriangular => {
                let ut = super::linalg::transpose(&upper, c);
                let lt = super::linalg::transpose(&lower, c);
                (
                    super::linalg::matmul(gd, &ut, c),
                    super::linalg::matmul(&lt, gd, c),
                )
            }
        };
        let mut q = center;
        for ci in 0..c {
            log_diag_grad[ci] += g_upper[ci * c + ci] * upper[ci * c + ci];
            for co in 0..c {
                if center_is_free(self.variant, ci, co) {
                    free_grad[q] += if ci < co { g_upper[ci * c + co] } else { g_lower[ci * c + co] };
                    q += 1;
                }
            }
        }
    }
}

/// `D = L·U` without pivoting, `L` unit lower triangular.
fn doolittle(d: &[Real], c: usize) -> Result<(Vec<Real>, Vec<Real>)> {
    let mut lower = vec![0.0; c * c];
    let mut upper = vec![0.0; c * c];
    for i in 0..c {
        for j in i..c {
            let s: Real = (0..i).map(|m| lower[i * c + m] * upper[m * c + j]).sum();
            upper[i * c + j] = d[i * c + j] - s;
        }
        if upper[i * c + i] == 0.0 {
            return Err(Error::Singular(format!(
                "leading minor {} of the center tap vanishes",
                i + 1
            )));
        }
        lower[i * c + i] = 1.0;
        for j in i + 1..c {
            let s: Real = (0..i).map(|m| lower[j * c + m] * upper[m * c + i]).sum();
            lower[j * c + i] = (d[j * c + i] - s) / upper[i * c + i];
        }
    }
    Ok((lower, upper))
}
