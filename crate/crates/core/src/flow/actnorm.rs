//! Per-channel affine normalization, `y = s ⊙ (x + b)`.

use super::Layer;
use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ActNorm {
    pub(crate) channels: usize,
    /// `ln|s_c|`.
    pub(crate) log_scale: Vec<Real>,
    /// Frozen `±1`.
    pub(crate) sign: Vec<Real>,
    pub(crate) bias: Vec<Real>,
    pub(crate) initialized: bool,
}

impl ActNorm {
    /// Waits for [`ActNorm::initialize`] before it can be used.
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            log_scale: vec![0.0; channels],
            sign: vec![1.0; channels],
            bias: vec![0.0; channels],
            initialized: false,
        }
    }

    /// `s = 1`, `b = 0`, already initialized.
    pub fn identity(channels: usize) -> Self {
        Self {
            initialized: true,
            ..Self::new(channels)
        }
    }

    /// Explicit scales and biases; fails on a zero scale.
    pub fn with_params(scale: &[Real], bias: &[Real]) -> Result<Self> {
        if scale.len() != bias.len() {
            return Err(Error::Shape("scale and bias lengths differ".into()));
        }
        if let Some(c) = scale.iter().position(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::Invalid(format!("actnorm scale of channel {c} is {}", scale[c])));
        }
        Ok(Self {
            channels: scale.len(),
            log_scale: scale.iter().map(|s| s.abs().ln()).collect(),
            sign: scale.iter().map(|s| s.signum()).collect(),
            bias: bias.to_vec(),
            initialized: true,
        })
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn scale(&self) -> Vec<Real> {
        self.log_scale.iter().zip(&self.sign).map(|(l, s)| s * l.exp()).collect()
    }

    pub fn bias(&self) -> &[Real] {
        &self.bias
    }

    /// Sets `b = −mean` and `s = 1/std` per channel over every pixel of the
    /// batch. Constant channels keep `s = 1`.
    pub fn initialize(&mut self, batch: &[Tensor]) -> Result<()> {
        let c = self.channels;
        let mut count = 0usize;
        let mut mean = vec![0.0; c];
        for x in batch {
            if x.dims3()?.2 != c {
                return Err(Error::Shape(format!("actnorm expects {c} channels")));
            }
            for px in x.data().chunks_exact(c) {
                for (m, v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
            }
            count += x.len() / c;
        }
        if count == 0 {
            return Err(Error::Invalid("cannot initialize actnorm on an empty batch".into()));
        }
        mean.iter_mut().for_each(|m| *m /= count as Real);
        let mut var = vec![0.0; c];
        for x in batch {
            for px in x.data().chunks_exact(c) {
                for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        for ch in 0..c {
            let v = var[ch] / count as Real;
            self.bias[ch] = -mean[ch];
            self.log_scale[ch] = if v > 1e-20 { -0.5 * v.ln() } else { 0.0 };
            self.sign[ch] = 1.0;
        }
        self.initialized = true;
        Ok(())
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        if !self.initialized {
            return Err(Error::Uninitialized);
        }
        let (h, w, c) = x.dims3()?;
        if c != self.channels {
            return Err(Error::Shape(format!("actnorm expects {} channels, got {c}", self.channels)));
        }
        Ok(h * w)
    }
}

impl Layer for ActNorm {
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Real)> {
        let hw = self.check(x)?;
        let s = self.scale();
        let mut y = x.clone();
        for px in y.data_mut().chunks_exact_mut(self.channels) {
            for ((v, s), b) in px.iter_mut().zip(&s).zip(&self.bias) {
                *v = s * (*v + b);
            }
        }
        Ok((y, hw as Real * self.log_scale.iter().sum::<Real>()))
    }

    fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.check(y)?;
        let s = self.scale();
        let mut x = y.clone();
        for px in x.data_mut().chunks_exact_mut(self.channels) {
            for ((v, s), b) in px.iter_mut().zip(&s).zip(&self.bias) {
                *v = *v / s - b;
            }
        }
        Ok(x)
    }

    fn params(&self) -> Vec<&[Real]> {
        vec![&self.log_scale, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut [Real]> {
        vec![&mut self.log_scale, &mut self.bias]
    }
}
