//! The small convolutional network used inside coupling layers.

use rand::Rng;

use crate::invconv::padded::{conv2d, conv2d_input_grad, conv2d_weight_grad};
use crate::{rng, Error, PadSpec, Real, Result, Tensor};

/// `k×k` convolution with bias and symmetric ("same") zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub(crate) k: usize,
    pub(crate) cin: usize,
    pub(crate) cout: usize,
    pub(crate) weight: Vec<Real>,
    pub(crate) bias: Vec<Real>,
}

impl Conv2d {
    pub fn zeros(k: usize, cin: usize, cout: usize) -> Self {
        Self {
            k,
            cin,
            cout,
            weight: vec![0.0; k * k * cin * cout],
            bias: vec![0.0; cout],
        }
    }

    /// Weights from `N(0, 1/fan_in)`, zero bias.
    pub fn random(k: usize, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let std = 1.0 / ((k * k * cin) as Real).sqrt();
        Self {
            weight: rng::normal_vec(rng, k * k * cin * cout, std),
            ..Self::zeros(k, cin, cout)
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, c) = x.dims3()?;
        if c != self.cin {
            return Err(Error::Shape(format!("conv expects {} channels, got {c}", self.cin)));
        }
        let mut y = conv2d(x, &self.weight, self.k, self.cout, PadSpec::same(self.k));
        for px in y.data_mut().chunks_exact_mut(self.cout) {
            for (v, b) in px.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Accumulates `[weight, bias]` gradients into `grads` and returns the
    /// input gradient.
    pub(crate) fn backward(&self, x: &Tensor, gy: &Tensor, grads: &mut [Real]) -> Tensor {
        let (h, w, _) = x.dims3().expect("conv input");
        let (gw, gb) = grads.split_at_mut(self.weight.len());
        conv2d_weight_grad(x, gy, self.k, PadSpec::same(self.k), gw);
        for px in gy.data().chunks_exact(self.cout) {
            for (g, v) in gb.iter_mut().zip(px) {
                *g += v;
            }
        }
        conv2d_input_grad(gy, &self.weight, self.k, self.cin, (h, w), PadSpec::same(self.k))
    }
}

/// `3×3 → ReLU → 1×1 → ReLU → 3×3`; the last layer starts at zero so the
/// network initially outputs zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingNet {
    pub(crate) layers: [Conv2d; 3],
}

/// Hidden activations kept for the backward pass.
pub(crate) struct NetCache {
    pub(crate) h1: Tensor,
    pub(crate) h2: Tensor,
}

fn relu(t: Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

fn relu_grad(g: &Tensor, h: &Tensor) -> Tensor {
    let mut out = g.clone();
    for (o, &a) in out.data_mut().iter_mut().zip(h.data()) {
        if a <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

impl CouplingNet {
    pub fn new(cin: usize, hidden: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self {
            layers: [
                Conv2d::random(3, cin, hidden, rng),
                Conv2d::random(1, hidden, hidden, rng),
                Conv2d::zeros(3, hidden, cout),
            ],
        }
    }

    /// All-zero weights; only useful as a template to load parameters into.
    pub fn zeros(cin: usize, hidden: usize, cout: usize) -> Self {
        Self {
            layers: [
                Conv2d::zeros(3, cin, hidden),
                Conv2d::zeros(1, hidden, hidden),
                Conv2d::zeros(3, hidden, cout),
            ],
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Conv2d::num_params).sum()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub(crate) fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, NetCache)> {
        let h1 = relu(self.layers[0].forward(x)?);
        let h2 = relu(self.layers[1].forward(&h1)?);
        let out = self.layers[2].forward(&h2)?;
        Ok((out, NetCache { h1, h2 }))
    }

    pub(crate) fn backward(&self, x: &Tensor, cache: &NetCache, gout: &Tensor, grads: &mut [Real]) -> Tensor {
        let n0 = self.layers[0].num_params();
        let n1 = self.layers[1].num_params();
        let (g0, rest) = grads.split_at_mut(n0);
        let (g1, g2) = rest.split_at_mut(n1);
        let gh2 = relu_grad(&self.layers[2].backward(&cache.h2, gout, g2), &cache.h2);
        let gh1 = relu_grad(&self.layers[1].backward(&cache.h1, &gh2, g1), &cache.h1);
        self.layers[0].backward(x, &gh1, g0)
    }

    pub(crate) fn params(&self) -> Vec<&[Real]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [Real]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}
