//! Invertible `1×1` convolution: a learned channel mixing at every pixel.

use rand::Rng;

use super::Layer;
use crate::invconv::linalg::{inverse, SmallLu};
use crate::{rng, Error, Real, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1 {
    pub(crate) channels: usize,
    /// `W[ci, co]`, row-major; `y[co] = Σ_ci x[ci]·W[ci, co]`.
    pub(crate) weight: Vec<Real>,
}

impl Conv1x1 {
    pub fn new(channels: usize, weight: Vec<Real>) -> Result<Self> {
        if weight.len() != channels * channels {
            return Err(Error::Shape(format!("1x1 weight needs {} entries", channels * channels)));
        }
        Ok(Self { channels, weight })
    }

    pub fn identity(channels: usize) -> Self {
        let mut w = vec![0.0; channels * channels];
        (0..channels).for_each(|c| w[c * channels + c] = 1.0);
        Self { channels, weight: w }
    }

    /// Random rotation (Gram–Schmidt on a Gaussian matrix).
    pub fn random_orthogonal(channels: usize, rng: &mut impl Rng) -> Self {
        let c = channels;
        loop {
            let mut w = rng::normal_vec(rng, c * c, 1.0);
            let mut ok = true;
            for i in 0..c {
                for j in 0..i {
                    let d: Real = (0..c).map(|t| w[i * c + t] * w[j * c + t]).sum();
                    for t in 0..c {
                        w[i * c + t] -= d * w[j * c + t];
                    }
                }
                let n: Real = (0..c).map(|t| w[i * c + t] * w[i * c + t]).sum::<Real>().sqrt();
                if n < 1e-6 {
                    ok = false;
                    break;
                }
                (0..c).for_each(|t| w[i * c + t] /= n);
            }
            if ok {
                return Self { channels, weight: w };
            }
        }
    }

    pub fn weight(&self) -> &[Real] {
        &self.weight
    }

    fn lu(&self) -> Result<SmallLu> {
        let lu = SmallLu::factor(&self.weight, self.channels)?;
        if lu.det().abs() <= crate::invconv::SINGULAR_TOL {
            return Err(Error::Singular(format!("1x1 weight has det {}", lu.det())));
        }
        Ok(lu)
    }
}

impl Layer for Conv1x1 {
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Real)> {
        let (h, w, _) = x.dims3()?;
        let ld = self.lu()?.log_abs_det();
        Ok((x.matmul_channels(&self.weight, self.channels)?, (h * w) as Real * ld))
    }

    fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.lu()?;
        y.matmul_channels(&inverse(&self.weight, self.channels)?, self.channels)
    }

    fn params(&self) -> Vec<&[Real]> {
        vec![&self.weight]
    }

    fn params_mut(&mut self) -> Vec<&mut [Real]> {
        vec![&mut self.weight]
    }
}
