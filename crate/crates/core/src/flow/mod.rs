//! Invertible layers and the multi-scale flow built from them.
//!
//! Every layer acts on a single `H×W×C` image and reports the log-absolute
//! Jacobian determinant of its forward map for that image. Batches are plain
//! slices of images processed independently.

mod actnorm;
pub mod checkpoint;
mod conv1x1;
mod coupling;
mod invconv_layer;
mod model;
pub mod nn;
mod split;
mod squeeze;

pub use actnorm::ActNorm;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv1x1::Conv1x1;
pub use coupling::{Coupling, CouplingKind};
pub use invconv_layer::InvConvLayer;
pub use model::{FlowModel, InitMode, Latents, ModelConfig, Permutation, Step};
pub use nn::{Conv2d, CouplingNet};
pub use split::Split;
pub use squeeze::{squeeze, unsqueeze, Squeeze};

use crate::{consts, Real, Result, Tensor, HALF_LN_2PI};

/// A bijection on images with a tractable log-determinant.
pub trait Layer {
    /// `(y, ln|det ∂y/∂x|)`.
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Real)>;

    fn inverse(&self, y: &Tensor) -> Result<Tensor>;

    /// Trainable parameter blocks in a fixed order.
    fn params(&self) -> Vec<&[Real]>;

    fn params_mut(&mut self) -> Vec<&mut [Real]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// `Σ ln N(v; 0, 1)` over every entry.
pub fn standard_normal_logp(z: &Tensor) -> Real {
    -0.5 * z.sum_sq() - z.len() as Real * HALF_LN_2PI
}

/// Bits per dimension of a continuous log-density on data dequantized from
/// 8-bit values to `[0, 1)`: `(−logp + dims·ln 256) / (dims·ln 2)`.
pub fn bits_per_dim(logp: Real, dims: usize) -> Real {
    let d = dims as Real;
    (-logp + d * (256.0 as Real).ln()) / (d * consts::LN_2)
}
