//! Normalizing flows built around single-pass invertible padded convolutions.
//!
//! A `k×k` convolution whose input is zero padded only on the top and left
//! has a (block) lower-triangular matrix under the row-major, channel-fastest
//! flattening used throughout this crate. Its inverse is a raster-order back
//! substitution and its log-determinant is available in closed form.
//!
//! Module map:
//!
//! * [`tensor`]: image tensors, padding, flattening order, elementwise ops.
//! * [`invconv`]: the invertible convolution, its inverse, log-determinant,
//!   parameterization and the two-pass emerging-convolution baseline.
//! * [`oracle`]: dense reference matrices, LU determinants and solves.
//! * [`flow`]: actnorm, 1×1 convolution, couplings, squeeze/split and the
//!   multi-scale model.
//! * [`train`]: analytic backward passes, Adam, datasets and the training loop.
//! * [`bench`]: the inversion timing harness.
//! * [`io`]: raw tensor files and PGM/PPM images.

pub mod bench;
pub mod error;
pub mod flow;
pub mod invconv;
pub mod io;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{flat_index, pad, PadSpec, Tensor};

/// Scalar type used by every tensor and parameter.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Scalar type used by every tensor and parameter.
#[cfg(feature = "f32")]
pub type Real = f32;

/// Mathematical constants for [`Real`].
#[cfg(not(feature = "f32"))]
pub use std::f64::consts;
/// Mathematical constants for [`Real`].
#[cfg(feature = "f32")]
pub use std::f32::consts;

/// `½·ln(2π)`, the constant of the standard normal log-density.
pub const HALF_LN_2PI: Real = 0.918_938_533_204_672_7;
