//! The multi-scale flow.
//!
//! Each of the `L` levels squeezes, applies `D` steps of
//! actnorm → invertible convolution → coupling, and (except the last) splits
//! off half of its channels under a conditional Gaussian. What remains after
//! the last level is scored under a standard normal.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{standard_normal_logp, squeeze, unsqueeze, ActNorm, Conv1x1, Coupling, CouplingKind, InvConvLayer, Layer, Split};
use crate::invconv::Variant;
use crate::rng::{self, FlowRng};
use crate::{Error, Real, Result, Tensor};

/// Channel-mixing layer of each flow step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Permutation {
    /// The `k×k` top-left padded convolution.
    InvConv,
    /// A `1×1` convolution.
    Conv1x1,
}

impl std::str::FromStr for Permutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invconv" => Ok(Permutation::InvConv),
            "conv1x1" => Ok(Permutation::Conv1x1),
            other => Err(Error::Invalid(format!("unknown permutation {other:?} (expected invconv or conv1x1)"))),
        }
    }
}

/// How the invertible convolutions start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Identity center tap, Gaussian off-center taps; random rotation for `1×1`.
    Random,
    /// Every convolution exactly the identity.
    Identity,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitMode::Random),
            "identity" => Ok(InitMode::Identity),
            other => Err(Error::Invalid(format!("unknown init {other:?} (expected random or identity)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub levels: usize,
    pub depth: usize,
    pub kernel_size: usize,
    pub variant: Variant,
    pub coupling: CouplingKind,
    pub permutation: Permutation,
    pub hidden: usize,
    pub scale_bound: Real,
    /// Squeeze at the start of every level.
    pub squeeze: bool,
    /// Standard deviation of the off-center convolution weights at init.
    pub conv_init_std: Real,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 8,
            width: 8,
            channels: 1,
            levels: 2,
            depth: 4,
            kernel_size: 3,
            variant: Variant::MaskedTriangular,
            coupling: CouplingKind::Quad,
            permutation: Permutation::InvConv,
            hidden: 64,
            scale_bound: 2.0,
            squeeze: true,
            conv_init_std: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Input shape of every step, in order, and the shape of the final latent.
    fn layout(&self) -> Result<(Vec<[usize; 3]>, [usize; 3])> {
        if self.levels == 0 || self.depth == 0 {
            return Err(Error::Config("levels and depth must be at least 1".into()));
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        let (mut h, mut w, mut c) = (self.height, self.width, self.channels);
        let mut shapes = Vec::new();
        for level in 0..self.levels {
            if self.squeeze {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Config(format!("level {level} cannot squeeze a {h}x{w} image")));
                }
                shapes.push([h, w, c]);
                (h, w, c) = (h / 2, w / 2, 4 * c);
            }
            let blocks = self.coupling.blocks();
            if c % blocks != 0 {
                return Err(Error::Config(format!(
                    "level {level} has {c} channels, not divisible by {blocks} for {} coupling",
                    self.coupling.name()
                )));
            }
            for _ in 0..3 * self.depth {
                shapes.push([h, w, c]);
            }
            if level + 1 < self.levels {
                if c % 2 != 0 {
                    return Err(Error::Config(format!("level {level} cannot split {c} channels")));
                }
                shapes.push([h, w, c]);
                c /= 2;
            }
        }
        Ok((shapes, [h, w, c]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Squeeze,
    ActNorm(ActNorm),
    InvConv(InvConvLayer),
    Conv1x1(Conv1x1),
    Coupling(Coupling),
    Split(Split),
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::Squeeze => "squeeze",
            Step::ActNorm(_) => "actnorm",
            Step::InvConv(_) => "invconv",
            Step::Conv1x1(_) => "conv1x1",
            Step::Coupling(_) => "coupling",
            Step::Split(_) => "split",
        }
    }

    pub fn params(&self) -> Vec<&[Real]> {
        match self {
            Step::Squeeze => Vec::new(),
            Step::ActNorm(l) => l.params(),
            Step::InvConv(l) => l.params(),
            Step::Conv1x1(l) => l.params(),
            Step::Coupling(l) => l.params(),
            Step::Split(l) => l.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [Real]> {
        match self {
            Step::Squeeze => Vec::new(),
            Step::ActNorm(l) => l.params_mut(),
            Step::InvConv(l) => l.params_mut(),
            Step::Conv1x1(l) => l.params_mut(),
            Step::Coupling(l) => l.params_mut(),
            Step::Split(l) => l.params_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Forward map of a bijective step.
    fn apply(&self, x: &Tensor) -> Result<(Tensor, Real)> {
        match self {
            Step::Squeeze => Ok((squeeze(x)?, 0.0)),
            Step::ActNorm(l) => l.forward(x),
            Step::InvConv(l) => l.forward(x),
            Step::Conv1x1(l) => l.forward(x),
            Step::Coupling(l) => l.forward(x),
            Step::Split(_) => unreachable!("split is not a bijection on its own"),
        }
    }

    fn invert(&self, y: &Tensor) -> Result<Tensor> {
        match self {
            Step::Squeeze => unsqueeze(y),
            Step::ActNorm(l) => l.inverse(y),
            Step::InvConv(l) => l.inverse(y),
            Step::Conv1x1(l) => l.inverse(y),
            Step::Coupling(l) => l.inverse(y),
            Step::Split(_) => unreachable!("split is inverted with its latent"),
        }
    }
}

/// Latent parts in the order they are produced: one per split, then the
/// final one.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub parts: Vec<Tensor>,
}

/// Result of pushing one image through the model.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub latents: Latents,
    /// Sum of the bijective steps' log-determinants.
    pub logdet: Real,
    /// Log-density of the latents under the split priors and the final
    /// standard normal.
    pub prior_logp: Real,
}

impl Encoding {
    pub fn logp(&self) -> Real {
        self.logdet + self.prior_logp
    }
}

/// Inputs of every step, kept for the backward pass.
pub(crate) struct Trace {
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) output: Tensor,
    pub(crate) logp: Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    config: ModelConfig,
    steps: Vec<Step>,
    shapes: Vec<[usize; 3]>,
    latent_shape: [usize; 3],
}

impl FlowModel {
    /// Actnorm layers are left uninitialized; call
    /// [`FlowModel::initialize_actnorm`] or [`FlowModel::reset_actnorm`].
    pub fn new(config: ModelConfig, init: InitMode, rng: &mut impl Rng) -> Result<Self> {
        let (shapes, latent_shape) = config.layout()?;
        let mut steps = Vec::with_capacity(shapes.len());
        let mut c = config.channels;
        for level in 0..config.levels {
            if config.squeeze {
                steps.push(Step::Squeeze);
                c *= 4;
            }
            for _ in 0..config.depth {
                steps.push(Step::ActNorm(ActNorm::new(c)));
                steps.push(match (config.permutation, init) {
                    (Permutation::InvConv, InitMode::Random) => Step::InvConv(InvConvLayer::new(
                        config.kernel_size,
                        c,
                        config.variant,
                        config.conv_init_std,
                        rng,
                    )),
                    (Permutation::InvConv, InitMode::Identity) => {
                        Step::InvConv(InvConvLayer::identity(config.kernel_size, c, config.variant))
                    }
                    (Permutation::Conv1x1, InitMode::Random) => Step::Conv1x1(Conv1x1::random_orthogonal(c, rng)),
                    (Permutation::Conv1x1, InitMode::Identity) => Step::Conv1x1(Conv1x1::identity(c)),
                });
                steps.push(Step::Coupling(Coupling::new(
                    config.coupling,
                    c,
                    config.hidden,
                    config.scale_bound,
                    rng,
                )?));
            }
            if level + 1 < config.levels {
                steps.push(Step::Split(Split::new(c)?));
                c /= 2;
            }
        }
        debug_assert_eq!(steps.len(), shapes.len());
        Ok(Self {
            config,
            steps,
            shapes,
            latent_shape,
        })
    }

    /// Identity convolutions, identity actnorm, zero-output couplings and
    /// priors: the model maps every image to itself (up to squeezes).
    pub fn identity(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut m = Self::new(config, InitMode::Identity, rng)?;
        m.reset_actnorm();
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn steps_mut(&mut self) -> &mut [Step] {
        &mut self.steps
    }

    /// Input shape of step `i`.
    pub fn step_shape(&self, i: usize) -> [usize; 3] {
        self.shapes[i]
    }

    pub fn latent_shapes(&self) -> Vec<[usize; 3]> {
        let mut out: Vec<[usize; 3]> = self
            .steps
            .iter()
            .zip(&self.shapes)
            .filter(|(s, _)| matches!(s, Step::Split(_)))
            .map(|(_, &[h, w, c])| [h, w, c / 2])
            .collect();
        out.push(self.latent_shape);
        out
    }

    pub fn dims(&self) -> usize {
        self.config.dims()
    }

    pub fn is_initialized(&self) -> bool {
        self.steps.iter().all(|s| match s {
            Step::ActNorm(a) => a.is_initialized(),
            _ => true,
        })
    }

    /// Sets every actnorm to `s = 1, b = 0`.
    pub fn reset_actnorm(&mut self) {
        for s in &mut self.steps {
            if let Step::ActNorm(a) = s {
                *a = ActNorm::identity(a.channels);
            }
        }
    }

    /// Data-dependent initialization: each actnorm normalizes the batch
    /// activations that reach it.
    pub fn initialize_actnorm(&mut self, batch: &[Tensor]) -> Result<()> {
        let mut acts: Vec<Tensor> = batch.to_vec();
        for i in 0..self.steps.len() {
            if let Step::ActNorm(a) = &mut self.steps[i] {
                a.initialize(&acts)?;
            }
            let step = &self.steps[i];
            acts = acts
                .par_iter()
                .map(|x| match step {
                    Step::Split(s) => Ok(s.forward(x)?.0),
                    other => Ok(other.apply(x)?.0),
                })
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (h, w, c) = x.dims3()?;
        let cfg = &self.config;
        if (h, w, c) != (cfg.height, cfg.width, cfg.channels) {
            return Err(Error::Shape(format!(
                "model expects {}x{}x{} images, got {h}x{w}x{c}",
                cfg.height, cfg.width, cfg.channels
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor) -> Result<Encoding> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut parts = Vec::new();
        let (mut logdet, mut prior) = (0.0, 0.0);
        for step in &self.steps {
            match step {
                Step::Split(s) => {
                    let (keep, z, lp) = s.forward(&h)?;
                    prior += lp;
                    parts.push(z);
                    h = keep;
                }
                other => {
                    let (y, ld) = other.apply(&h)?;
                    logdet += ld;
                    h = y;
                }
            }
        }
        prior += standard_normal_logp(&h);
        parts.push(h);
        Ok(Encoding {
            latents: Latents { parts },
            logdet,
            prior_logp: prior,
        })
    }

    /// `ln p(x)` and the latents of `x`.
    pub fn logprob(&self, x: &Tensor) -> Result<(Real, Latents)> {
        let e = self.encode(x)?;
        Ok((e.logp(), e.latents))
    }

    pub fn logprob_batch(&self, xs: &[Tensor]) -> Result<Vec<Real>> {
        xs.par_iter().map(|x| Ok(self.encode(x)?.logp())).collect()
    }

    pub(crate) fn trace(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.steps.len());
        let mut h = x.clone();
        let mut logp = 0.0;
        for step in &self.steps {
            let next = match step {
                Step::Split(s) => {
                    let (keep, _, lp) = s.forward(&h)?;
                    logp += lp;
                    keep
                }
                other => {
                    let (y, ld) = other.apply(&h)?;
                    logp += ld;
                    y
                }
            };
            inputs.push(std::mem::replace(&mut h, next));
        }
        logp += standard_normal_logp(&h);
        Ok(Trace {
            inputs,
            output: h,
            logp,
        })
    }

    /// Exact inverse of [`FlowModel::encode`] given all latent parts.
    pub fn decode(&self, latents: &Latents) -> Result<Tensor> {
        let expected = self.latent_shapes();
        if latents.parts.len() != expected.len()
            || latents.parts.iter().zip(&expected).any(|(p, s)| p.shape() != s)
        {
            return Err(Error::Shape(format!("latents do not match shapes {expected:?}")));
        }
        let mut parts = latents.parts.iter().rev();
        let mut h = parts.next().unwrap().clone();
        for step in self.steps.iter().rev() {
            h = match step {
                Step::Split(s) => s.inverse(&h, parts.next().unwrap())?,
                other => other.invert(&h)?,
            };
        }
        Ok(h)
    }

    /// One image from `z ~ N(0, T²)` at the top and `T`-tempered split priors.
    pub fn sample_one(&self, temperature: Real, rng: &mut impl Rng) -> Result<Tensor> {
        let [h, w, c] = self.latent_shape;
        let z = rng::normal_vec(rng, h * w * c, 1.0).into_iter().map(|v| v * temperature).collect();
        let mut x = Tensor::new(&[h, w, c], z)?;
        for step in self.steps.iter().rev() {
            x = match step {
                Step::Split(s) => s.sample(&x, temperature, rng)?.0,
                other => other.invert(&x)?,
            };
        }
        Ok(x)
    }

    /// `n` samples; image `i` uses its own stream seeded from `rng`, so the
    /// result does not depend on the thread count.
    pub fn sample(&self, n: usize, temperature: Real, rng: &mut impl Rng) -> Result<Vec<Tensor>> {
        let seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();
        seeds
            .par_iter()
            .map(|&s| self.sample_one(temperature, &mut FlowRng::seed_from_u64(s)))
            .collect()
    }

    pub fn params(&self) -> Vec<&[Real]> {
        self.steps.iter().flat_map(Step::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [Real]> {
        self.steps.iter_mut().flat_map(Step::params_mut).collect()
    }

    pub fn num_params(&self) -> usize {
        self.steps.iter().map(Step::num_params).sum()
    }

    /// All trainable parameters concatenated in step order.
    pub fn param_vector(&self) -> Vec<Real> {
        self.params().concat()
    }

    pub fn set_param_vector(&mut self, v: &[Real]) -> Result<()> {
        if v.len() != self.num_params() {
            return Err(Error::Shape(format!("{} values for {} parameters", v.len(), self.num_params())));
        }
        let mut off = 0;
        for p in self.params_mut() {
            p.copy_from_slice(&v[off..off + p.len()]);
            off += p.len();
        }
        Ok(())
    }

    /// Smallest `|D[c, c]|` (or `|U[c, c]|` for block kernels) over every
    /// invertible convolution.
    pub fn min_conv_diagonal(&self) -> Option<Real> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::InvConv(l) => l.params.log_diag.iter().copied().reduce(Real::min),
                _ => None,
            })
            .reduce(Real::min)
            .map(Real::exp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, seeded};

    fn small() -> ModelConfig {
        ModelConfig {
            height: 4,
            width: 4,
            channels: 2,
            levels: 2,
            depth: 2,
            hidden: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn layout_shapes() {
        let m = FlowModel::new(small(), InitMode::Random, &mut seeded(1)).unwrap();
        assert_eq!(m.latent_shapes(), vec![[2, 2, 4], [1, 1, 16]]);
        assert_eq!(m.steps().len(), 2 + 2 * 3 * 2 + 1);
    }

    #[test]
    fn bad_configs() {
        let mut c = small();
        c.height = 6;
        assert!(matches!(FlowModel::new(c, InitMode::Random, &mut seeded(1)), Err(Error::Config(_))));
        let c = ModelConfig {
            squeeze: false,
            channels: 2,
            ..small()
        };
        assert!(FlowModel::new(c, InitMode::Random, &mut seeded(1)).is_err());
    }

    #[test]
    fn uninitialized_actnorm_is_an_error() {
        let m = FlowModel::new(small(), InitMode::Random, &mut seeded(1)).unwrap();
        assert!(matches!(m.encode(&Tensor::zeros(&[4, 4, 2])), Err(Error::Uninitialized)));
    }

    #[test]
    fn identity_model_scores_prior() {
        let m = FlowModel::identity(small(), &mut seeded(2)).unwrap();
        let x = Tensor::new(&[4, 4, 2], normal_vec(&mut seeded(3), 32, 1.0)).unwrap();
        let (lp, _) = m.logprob(&x).unwrap();
        assert!((lp - standard_normal_logp(&x)).abs() < 1e-12);
        assert_eq!(m.sample_one(0.0, &mut seeded(4)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn encode_decode_roundtrip() {
        let mut m = FlowModel::new(small(), InitMode::Random, &mut seeded(5)).unwrap();
        let mut rng = seeded(6);
        let v: Vec<Real> = m.param_vector().iter().map(|p| p + 0.05 * rng::normal(&mut rng)).collect();
        m.reset_actnorm();
        m.set_param_vector(&v).unwrap();
        let x = Tensor::new(&[4, 4, 2], normal_vec(&mut rng, 32, 1.0)).unwrap();
        let e = m.encode(&x).unwrap();
        assert!(m.decode(&e.latents).unwrap().max_abs_diff(&x).unwrap() < 1e-8);
    }
}
