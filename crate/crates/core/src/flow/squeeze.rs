//! `2×2` space-to-depth reshaping.
//!
//! Output channel `4·c + s` holds sub-pixel `s` of input channel `c`, with
//! `s` running over top-left, top-right, bottom-left, bottom-right.

use super::Layer;
use crate::{Error, Real, Result, Tensor};

pub fn squeeze(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("squeeze needs even spatial dims, got {h}x{w}")));
    }
    Ok(Tensor::from_fn(h / 2, w / 2, 4 * c, |i, j, q| {
        let (ch, s) = (q / 4, q % 4);
        x.get(2 * i + s / 2, 2 * j + s % 2, ch)
    }))
}

pub fn unsqueeze(y: &Tensor) -> Result<Tensor> {
    let (h, w, c4) = y.dims3()?;
    if c4 % 4 != 0 {
        return Err(Error::Shape(format!("unsqueeze needs channels divisible by 4, got {c4}")));
    }
    Ok(Tensor::from_fn(2 * h, 2 * w, c4 / 4, |i, j, c| {
        y.get(i / 2, j / 2, 4 * c + 2 * (i % 2) + j % 2)
    }))
}

/// [`squeeze`] as a parameter-free layer with zero log-determinant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Squeeze;

impl Layer for Squeeze {
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Real)> {
        Ok((squeeze(x)?, 0.0))
    }

    fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        unsqueeze(y)
    }

    fn params(&self) -> Vec<&[Real]> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut [Real]> {
        Vec::new()
    }
}
