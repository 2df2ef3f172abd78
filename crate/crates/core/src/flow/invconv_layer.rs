//! The top-left padded invertible convolution as a flow layer.

use rand::Rng;

use super::Layer;
use crate::invconv::{conv_forward, conv_inverse, ConvKernel, InvConvParams, Variant};
use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct InvConvLayer {
    pub(crate) params: InvConvParams,
}

impl InvConvLayer {
    /// Identity center tap, off-center weights from `N(0, std²)`.
    pub fn new(k: usize, channels: usize, variant: Variant, std: Real, rng: &mut impl Rng) -> Self {
        Self {
            params: InvConvParams::init(k, channels, variant, std, rng),
        }
    }

    pub fn identity(k: usize, channels: usize, variant: Variant) -> Self {
        Self {
            params: InvConvParams::identity(k, channels, variant),
        }
    }

    pub fn from_kernel(kernel: &ConvKernel) -> Result<Self> {
        Ok(Self {
            params: InvConvParams::extract(kernel)?,
        })
    }

    pub fn parameters(&self) -> &InvConvParams {
        &self.params
    }

    pub fn kernel(&self) -> ConvKernel {
        self.params.reconstruct()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (h, w, c) = x.dims3()?;
        if c != self.params.channels {
            return Err(Error::Shape(format!(
                "invertible conv expects {} channels, got {c}",
                self.params.channels
            )));
        }
        Ok((h, w))
    }
}

impl Layer for InvConvLayer {
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Real)> {
        let (h, w) = self.check(x)?;
        Ok((conv_forward(x, &self.kernel())?, self.params.logdet(h, w)))
    }

    fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.check(y)?;
        conv_inverse(y, &self.kernel())
    }

    fn params(&self) -> Vec<&[Real]> {
        vec![&self.params.free, &self.params.log_diag]
    }

    fn params_mut(&mut self) -> Vec<&mut [Real]> {
        vec![&mut self.params.free, &mut self.params.log_diag]
    }
}
