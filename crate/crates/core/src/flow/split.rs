//! Factoring out half of the channels under a learned conditional Gaussian.
//!
//! The first half is kept; the second half `z` is scored under
//! `N(μ(keep), σ(keep)²)` where `(μ, ln σ)` come from a zero-initialized
//! `3×3` convolution of the kept half.

use rand::Rng;

use super::nn::Conv2d;
use crate::{rng, Error, Real, Result, Tensor, HALF_LN_2PI};

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub(crate) channels: usize,
    pub(crate) prior: Conv2d,
}

impl Split {
    /// Zero prior network: the factored half is initially standard normal.
    pub fn new(channels: usize) -> Result<Self> {
        if channels < 2 || channels % 2 != 0 {
            return Err(Error::Shape(format!("split needs an even channel count, got {channels}")));
        }
        Ok(Self {
            channels,
            prior: Conv2d::zeros(3, channels / 2, channels),
        })
    }

    pub fn prior(&self) -> &Conv2d {
        &self.prior
    }

    pub fn params(&self) -> Vec<&[Real]> {
        vec![&self.prior.weight, &self.prior.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [Real]> {
        vec![&mut self.prior.weight, &mut self.prior.bias]
    }

    /// `(μ, ln σ)` conditioned on the kept half.
    pub fn mean_log_std(&self, keep: &Tensor) -> Result<(Tensor, Tensor)> {
        self.prior.forward(keep)?.split_channels(self.channels / 2)
    }

    /// `(keep, z, ln p(z | keep))`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor, Real)> {
        let (_, _, c) = x.dims3()?;
        if c != self.channels {
            return Err(Error::Shape(format!("split expects {} channels, got {c}", self.channels)));
        }
        let (keep, z) = x.split_channels(c / 2)?;
        let (mu, log_std) = self.mean_log_std(&keep)?;
        let mut logp = 0.0;
        for ((&zv, &m), &ls) in z.data().iter().zip(mu.data()).zip(log_std.data()) {
            let e = (zv - m) * (-ls).exp();
            logp += -0.5 * e * e - ls - HALF_LN_2PI;
        }
        Ok((keep, z, logp))
    }

    /// Reassembles the input from the kept half and a stored `z`.
    pub fn inverse(&self, keep: &Tensor, z: &Tensor) -> Result<Tensor> {
        Tensor::concat_channels(&[keep, z])
    }

    /// Draws `z = μ + T·σ·ε` and reassembles the input.
    pub fn sample(&self, keep: &Tensor, temperature: Real, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
        let (mu, log_std) = self.mean_log_std(keep)?;
        let mut z = mu.clone();
        for (v, &ls) in z.data_mut().iter_mut().zip(log_std.data()) {
            *v += temperature * ls.exp() * rng::normal(rng);
        }
        Ok((self.inverse(keep, &z)?, z))
    }

    /// The bijection `[keep, z] ↦ [keep, (z − μ)/σ]` whose log-determinant
    /// `−Σ ln σ` is the density's Jacobian factor.
    pub fn whiten(&self, x: &Tensor) -> Result<(Tensor, Real)> {
        let (keep, z, _) = self.forward(x)?;
        let (mu, log_std) = self.mean_log_std(&keep)?;
        let eps = z.sub(&mu)?.mul(&log_std.map(|v| (-v).exp()))?;
        Ok((Tensor::concat_channels(&[&keep, &eps])?, -log_std.sum()))
    }
}
