//! Seeded random number generation shared by initialization, datasets and sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Real;

/// The generator used everywhere a seed is accepted; reproducible across platforms.
pub type FlowRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> FlowRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
pub fn normal(rng: &mut impl Rng) -> Real {
    let z: f64 = rng.sample(StandardNormal);
    z as Real
}

/// Uniform draw in `[0, 1)`.
#[inline]
pub fn uniform(rng: &mut impl Rng) -> Real {
    let u: f64 = rng.random();
    let u = u as Real;
    // f64 -> f32 rounding can land on 1.0
    if u >= 1.0 {
        1.0 - Real::EPSILON / 2.0
    } else {
        u
    }
}

pub fn normal_vec(rng: &mut impl Rng, len: usize, std: Real) -> Vec<Real> {
    (0..len).map(|_| std * normal(rng)).collect()
}
