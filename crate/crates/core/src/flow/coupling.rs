//! Affine and quad coupling.
//!
//! The channels are cut into `B` equal blocks `x_1 … x_B`. Block 1 passes
//! through; block `i + 1` is updated as
//! `y_{i+1} = (x_{i+1} + f_i(x_1..x_i)) · exp(g_i(x_1..x_i))` with one network
//! per update. Affine coupling is `B = 2`, quad coupling `B = 4`. Each
//! network emits `2·C/B` channels: the shift `f`, then a raw scale mapped to
//! `g = s_max·tanh(raw)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::CouplingNet;
use super::Layer;
use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingKind {
    Affine,
    Quad,
}

impl CouplingKind {
    pub fn blocks(self) -> usize {
        match self {
            CouplingKind::Affine => 2,
            CouplingKind::Quad => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CouplingKind::Affine => "affine",
            CouplingKind::Quad => "quad",
        }
    }
}

impl std::str::FromStr for CouplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(CouplingKind::Affine),
            "quad" => Ok(CouplingKind::Quad),
            other => Err(Error::Invalid(format!("unknown coupling {other:?} (expected affine or quad)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub(crate) kind: CouplingKind,
    pub(crate) channels: usize,
    pub(crate) scale_bound: Real,
    pub(crate) nets: Vec<CouplingNet>,
}

/// Per-update quantities reused by the backward pass.
pub(crate) struct UpdateCache {
    pub(crate) prefix: Tensor,
    pub(crate) net: super::nn::NetCache,
    pub(crate) tanh: Tensor,
    pub(crate) expg: Tensor,
    pub(crate) y: Tensor,
}

impl Coupling {
    pub fn new(kind: CouplingKind, channels: usize, hidden: usize, scale_bound: Real, rng: &mut impl Rng) -> Result<Self> {
        let b = Self::block_size(kind, channels)?;
        let nets = (1..kind.blocks()).map(|i| CouplingNet::new(i * b, hidden, 2 * b, rng)).collect();
        Ok(Self {
            kind,
            channels,
            scale_bound,
            nets,
        })
    }

    /// Zero networks: the identity map.
    pub fn zeros(kind: CouplingKind, channels: usize, hidden: usize, scale_bound: Real) -> Result<Self> {
        let b = Self::block_size(kind, channels)?;
        let nets = (1..kind.blocks()).map(|i| CouplingNet::zeros(i * b, hidden, 2 * b)).collect();
        Ok(Self {
            kind,
            channels,
            scale_bound,
            nets,
        })
    }

    /// Wraps explicit networks; network `i` must read `(i + 1)·C/B` channels
    /// and emit `2·C/B`.
    pub fn from_nets(kind: CouplingKind, channels: usize, scale_bound: Real, nets: Vec<CouplingNet>) -> Result<Self> {
        let b = Self::block_size(kind, channels)?;
        if nets.len() != kind.blocks() - 1 {
            return Err(Error::Shape(format!("{} coupling needs {} nets", kind.name(), kind.blocks() - 1)));
        }
        for (i, n) in nets.iter().enumerate() {
            if n.layers[0].cin != (i + 1) * b || n.layers[2].cout != 2 * b {
                return Err(Error::Shape(format!("coupling net {i} has the wrong channel counts")));
            }
        }
        Ok(Self {
            kind,
            channels,
            scale_bound,
            nets,
        })
    }

    fn block_size(kind: CouplingKind, channels: usize) -> Result<usize> {
        let blocks = kind.blocks();
        if channels == 0 || channels % blocks != 0 {
            return Err(Error::Shape(format!(
                "{} coupling needs channels divisible by {blocks}, got {channels}",
                kind.name()
            )));
        }
        Ok(channels / blocks)
    }

    pub fn kind(&self) -> CouplingKind {
        self.kind
    }

    pub fn nets(&self) -> &[CouplingNet] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [CouplingNet] {
        &mut self.nets
    }

    fn bsize(&self) -> usize {
        self.channels / self.kind.blocks()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let (_, _, c) = x.dims3()?;
        if c != self.channels {
            return Err(Error::Shape(format!("coupling expects {} channels, got {c}", self.channels)));
        }
        Ok(())
    }

    /// `(f, tanh(raw))` of update `i` from the first `i + 1` blocks.
    fn shift_scale(&self, i: usize, prefix: &Tensor) -> Result<(Tensor, Tensor, super::nn::NetCache)> {
        let (out, cache) = self.nets[i].forward_cached(prefix)?;
        let (f, raw) = out.split_channels(self.bsize())?;
        Ok((f, raw.map(Real::tanh), cache))
    }

    pub(crate) fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, Real, Vec<UpdateCache>)> {
        self.check(x)?;
        let b = self.bsize();
        let blocks = x.chunk_channels(self.kind.blocks())?;
        let mut ys = vec![blocks[0].clone()];
        let mut caches = Vec::with_capacity(self.nets.len());
        let mut logdet = 0.0;
        for i in 0..self.nets.len() {
            let prefix = x.channel_slice(0, (i + 1) * b)?;
            let (f, t, net) = self.shift_scale(i, &prefix)?;
            let expg = t.map(|v| (self.scale_bound * v).exp());
            logdet += self.scale_bound * t.sum();
            let y = blocks[i + 1].add(&f)?.mul(&expg)?;
            ys.push(y.clone());
            caches.push(UpdateCache {
                prefix,
                net,
                tanh: t,
                expg,
                y,
            });
        }
        let refs: Vec<&Tensor> = ys.iter().collect();
        Ok((Tensor::concat_channels(&refs)?, logdet, caches))
    }
}

impl Layer for Coupling {
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Real)> {
        let (y, ld, _) = self.forward_cached(x)?;
        Ok((y, ld))
    }

    fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.check(y)?;
        let blocks = y.chunk_channels(self.kind.blocks())?;
        let mut xs = vec![blocks[0].clone()];
        for i in 0..self.nets.len() {
            let refs: Vec<&Tensor> = xs.iter().collect();
            let prefix = Tensor::concat_channels(&refs)?;
            let (f, t, _) = self.shift_scale(i, &prefix)?;
            let inv = t.map(|v| (-self.scale_bound * v).exp());
            xs.push(blocks[i + 1].mul(&inv)?.sub(&f)?);
        }
        let refs: Vec<&Tensor> = xs.iter().collect();
        Tensor::concat_channels(&refs)
    }

    fn params(&self) -> Vec<&[Real]> {
        self.nets.iter().flat_map(CouplingNet::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [Real]> {
        self.nets.iter_mut().flat_map(CouplingNet::params_mut).collect()
    }
}
