//! Invertible `k×k` convolutions padded on the top and left only.
//!
//! With padding `(k−1, 0, k−1, 0)` output pixel `(i, j)` reads input pixels
//! `(i′ ≤ i, j′ ≤ j)` only, and the bottom-right tap `D = K[k−1, k−1, :, :]`
//! couples a pixel to itself. Under the channel-fastest flat order the
//! convolution matrix is therefore block lower triangular with `H·W` copies
//! of `D` on its diagonal:
//!
//! * [`Variant::MaskedTriangular`] zeroes `D[ci, co]` for `ci > co`, which
//!   makes the matrix triangular with diagonal `D[c, c]`. Invertible iff every
//!   `D[c, c] ≠ 0`.
//! * [`Variant::BlockTriangular`] keeps `D` dense. Invertible iff `det D ≠ 0`.
//!
//! In both cases `ln|det M| = H·W·ln|det D|` and the inverse is a single
//! raster-order back substitution.

mod emerging;
pub mod linalg;
pub(crate) mod padded;
mod params;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use emerging::{EmergingConv, PreparedEmerging};
pub use params::InvConvParams;

use self::linalg::SmallLu;
use self::padded::{back_substitute, conv2d, widx, CenterSolve, ScanOrder};
use crate::{rng, Error, PadSpec, Real, Result, Tensor};

/// Default singularity threshold on `|D[c, c]|` or `|det D|`.
pub const SINGULAR_TOL: Real = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "block")]
    BlockTriangular,
    #[serde(rename = "masked")]
    MaskedTriangular,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::BlockTriangular => "block",
            Variant::MaskedTriangular => "masked",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block" => Ok(Variant::BlockTriangular),
            "masked" => Ok(Variant::MaskedTriangular),
            other => Err(Error::Invalid(format!(
                "unknown kernel variant {other:?} (expected masked or block)"
            ))),
        }
    }
}

/// `k×k×C×C` kernel, stored `[a][b][ci][co]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    k: usize,
    channels: usize,
    variant: Variant,
    weights: Vec<Real>,
}

impl ConvKernel {
    pub fn new(k: usize, channels: usize, variant: Variant, weights: Vec<Real>) -> Result<Self> {
        if k == 0 || k % 2 == 0 {
            return Err(Error::Invalid(format!("window size must be odd, got {k}")));
        }
        if channels == 0 {
            return Err(Error::Invalid("kernel needs at least one channel".into()));
        }
        if weights.len() != k * k * channels * channels {
            return Err(Error::Shape(format!(
                "{} weights for a {k}x{k}x{channels}x{channels} kernel",
                weights.len()
            )));
        }
        let kernel = Self {
            k,
            channels,
            variant,
            weights,
        };
        if variant == Variant::MaskedTriangular {
            let d = kernel.diagonal_tap();
            for ci in 0..channels {
                for co in 0..ci {
                    if d[ci * channels + co] != 0.0 {
                        return Err(Error::MaskViolation(format!(
                            "diagonal tap D[{ci}, {co}] = {} must be zero",
                            d[ci * channels + co]
                        )));
                    }
                }
            }
        }
        Ok(kernel)
    }

    /// `D = I`, every other tap zero.
    pub fn identity(k: usize, channels: usize, variant: Variant) -> Self {
        let mut w = vec![0.0; k * k * channels * channels];
        for c in 0..channels {
            w[widx(k, channels, channels, k - 1, k - 1, c, c)] = 1.0;
        }
        Self::new(k, channels, variant, w).expect("identity kernel")
    }

    /// Gaussian weights with standard deviation `std` on every free entry;
    /// diagonal entries of `D` have magnitude in `[min_diag, min_diag + 1)`
    /// with random sign.
    pub fn random(k: usize, channels: usize, variant: Variant, std: Real, min_diag: Real, rng: &mut impl Rng) -> Self {
        let mut w = rng::normal_vec(rng, k * k * channels * channels, std);
        for ci in 0..channels {
            for co in 0..channels {
                let q = widx(k, channels, channels, k - 1, k - 1, ci, co);
                if ci == co {
                    let mag = min_diag + rng::uniform(rng);
                    w[q] = if rng.random::<bool>() { mag } else { -mag };
                } else if ci > co && variant == Variant::MaskedTriangular {
                    w[q] = 0.0;
                }
            }
        }
        Self::new(k, channels, variant, w).expect("random kernel respects its mask")
    }

    /// Reads a `(k, k, C, C)` tensor.
    pub fn from_tensor(t: &Tensor, variant: Variant) -> Result<Self> {
        match *t.shape() {
            [k, k2, ci, co] if k == k2 && ci == co => Self::new(k, ci, variant, t.data().to_vec()),
            _ => Err(Error::Shape(format!(
                "kernel tensor must be (k, k, C, C), got {:?}",
                t.shape()
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.k, self.k, self.channels, self.channels], self.weights.clone()).unwrap()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn weights(&self) -> &[Real] {
        &self.weights
    }

    pub fn weight(&self, a: usize, b: usize, ci: usize, co: usize) -> Real {
        self.weights[widx(self.k, self.channels, self.channels, a, b, ci, co)]
    }

    /// Sets one weight; writes that the mask forbids are rejected.
    pub fn set_weight(&mut self, a: usize, b: usize, ci: usize, co: usize, v: Real) -> Result<()> {
        if v != 0.0 && !self.is_free(a, b, ci, co) {
            return Err(Error::MaskViolation(format!(
                "tap ({a}, {b}) entry ({ci}, {co}) is masked"
            )));
        }
        let q = widx(self.k, self.channels, self.channels, a, b, ci, co);
        self.weights[q] = v;
        Ok(())
    }

    /// Whether the mask allows `K[a, b, ci, co]` to be nonzero.
    pub fn is_free(&self, a: usize, b: usize, ci: usize, co: usize) -> bool {
        let center = a == self.k - 1 && b == self.k - 1;
        !(center && self.variant == Variant::MaskedTriangular && ci > co)
    }

    /// Mask in weight order, `true` where the weight is free.
    pub fn mask(&self) -> Vec<bool> {
        let (k, c) = (self.k, self.channels);
        let mut m = Vec::with_capacity(self.weights.len());
        for a in 0..k {
            for b in 0..k {
                for ci in 0..c {
                    for co in 0..c {
                        m.push(self.is_free(a, b, ci, co));
                    }
                }
            }
        }
        m
    }

    /// The `C×C` diagonal tap `D[ci, co] = K[k−1, k−1, ci, co]`, row-major.
    pub fn diagonal_tap(&self) -> Vec<Real> {
        let start = widx(self.k, self.channels, self.channels, self.k - 1, self.k - 1, 0, 0);
        self.weights[start..start + self.channels * self.channels].to_vec()
    }

    /// Padding under which this kernel is triangular.
    pub fn padding(&self) -> PadSpec {
        PadSpec::top_left(self.k)
    }

    /// Precomputes the per-pixel solver used by [`conv_inverse`].
    pub fn prepare_inverse(&self) -> Result<PreparedInverse<'_>> {
        if let Invertibility::No(reason) = is_invertible(self, SINGULAR_TOL) {
            return Err(Error::Singular(reason.to_string()));
        }
        let d = self.diagonal_tap();
        let center = match self.variant {
            Variant::MaskedTriangular => CenterSolve::Ascending(d),
            Variant::BlockTriangular => {
                CenterSolve::Lu(SmallLu::factor(&linalg::transpose(&d, self.channels), self.channels)?)
            }
        };
        Ok(PreparedInverse { kernel: self, center })
    }
}

/// A kernel together with its factored diagonal tap.
#[derive(Debug, Clone)]
pub struct PreparedInverse<'a> {
    kernel: &'a ConvKernel,
    center: CenterSolve,
}

impl PreparedInverse<'_> {
    pub fn apply(&self, y: &Tensor) -> Result<Tensor> {
        check_channels(y, self.kernel)?;
        back_substitute(
            y,
            &self.kernel.weights,
            self.kernel.k,
            self.kernel.padding(),
            ScanOrder::Raster,
            &self.center,
        )
    }
}

fn check_channels(x: &Tensor, kernel: &ConvKernel) -> Result<()> {
    let (_, _, c) = x.dims3()?;
    if c != kernel.channels {
        return Err(Error::Shape(format!(
            "image has {c} channels, kernel expects {}",
            kernel.channels
        )));
    }
    Ok(())
}

/// Same-size convolution with top-left padding.
pub fn conv_forward(x: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    check_channels(x, kernel)?;
    Ok(conv2d(x, &kernel.weights, kernel.k, kernel.channels, kernel.padding()))
}

/// Recovers `x` from `y = conv_forward(x, kernel)` by back substitution in
/// raster order.
pub fn conv_inverse(y: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    kernel.prepare_inverse()?.apply(y)
}

/// [`conv_inverse`] over a batch, parallel across images on the current
/// rayon pool.
pub fn conv_inverse_batch(ys: &[Tensor], kernel: &ConvKernel) -> Result<Vec<Tensor>> {
    let prepared = kernel.prepare_inverse()?;
    ys.par_iter().map(|y| prepared.apply(y)).collect()
}

/// `ln|det M|` of the convolution acting on `h×w` images.
pub fn conv_logdet(kernel: &ConvKernel, h: usize, w: usize) -> Result<Real> {
    if let Invertibility::No(reason) = is_invertible(kernel, SINGULAR_TOL) {
        return Err(Error::Singular(reason.to_string()));
    }
    let d = kernel.diagonal_tap();
    let c = kernel.channels;
    let per_pixel = match kernel.variant {
        Variant::MaskedTriangular => (0..c).map(|i| d[i * c + i].abs().ln()).sum(),
        Variant::BlockTriangular => SmallLu::factor(&d, c)?.log_abs_det(),
    };
    Ok((h * w) as Real * per_pixel)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SingularReason {
    ZeroDiagonalTap { channel: usize, value: Real },
    SingularBlock { det: Real },
}

impl std::fmt::Display for SingularReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SingularReason::ZeroDiagonalTap { channel, value } => {
                write!(f, "zero diagonal tap (channel {channel}, value {value:e})")
            }
            SingularReason::SingularBlock { det } => write!(f, "singular block (det D = {det:e})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Invertibility {
    Yes,
    No(SingularReason),
}

impl Invertibility {
    pub fn is_yes(&self) -> bool {
        matches!(self, Invertibility::Yes)
    }
}

/// Diagonal-tap criterion: every `|D[c, c]| > tol` for the masked variant,
/// `|det D| > tol` for the block variant. For `C = 1` both reduce to
/// `|K[k−1, k−1]| > tol`.
pub fn is_invertible(kernel: &ConvKernel, tol: Real) -> Invertibility {
    let d = kernel.diagonal_tap();
    let c = kernel.channels;
    match kernel.variant {
        Variant::MaskedTriangular => {
            for ch in 0..c {
                let v = d[ch * c + ch];
                if v.abs() <= tol {
                    return Invertibility::No(SingularReason::ZeroDiagonalTap { channel: ch, value: v });
                }
            }
            Invertibility::Yes
        }
        Variant::BlockTriangular => {
            if c == 1 {
                if d[0].abs() <= tol {
                    return Invertibility::No(SingularReason::ZeroDiagonalTap { channel: 0, value: d[0] });
                }
                return Invertibility::Yes;
            }
            let det = SmallLu::factor(&d, c).map(|lu| lu.det()).unwrap_or(0.0);
            if det.abs() <= tol {
                Invertibility::No(SingularReason::SingularBlock { det })
            } else {
                Invertibility::Yes
            }
        }
    }
}
