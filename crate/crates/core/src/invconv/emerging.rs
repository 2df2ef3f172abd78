//! Two-pass "emerging" convolution baseline.
//!
//! Two `k×k` kernels applied with symmetric padding, each masked to be
//! causal in opposite directions: the first reads only pixels at or before
//! the current one in raster order, the second only pixels at or after it.
//! Their composition has a full `k×k` receptive field; inverting it takes a
//! raster-order back substitution followed by a reverse-raster one.

use rand::Rng;

use super::padded::{back_substitute, conv2d, widx, CenterSolve, ScanOrder};
use crate::{rng, Error, PadSpec, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    /// Taps after the center in raster order vanish; `D[ci, co] = 0` for `ci > co`.
    Forward,
    /// Taps before the center vanish; `D[ci, co] = 0` for `ci < co`.
    Backward,
}

fn is_free(dir: Direction, k: usize, a: usize, b: usize, ci: usize, co: usize) -> bool {
    let p = k / 2;
    let tap = (a, b).cmp(&(p, p));
    match (dir, tap) {
        (_, std::cmp::Ordering::Equal) => match dir {
            Direction::Forward => ci <= co,
            Direction::Backward => ci >= co,
        },
        (Direction::Forward, std::cmp::Ordering::Less) => true,
        (Direction::Backward, std::cmp::Ordering::Greater) => true,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmergingConv {
    k: usize,
    channels: usize,
    first: Vec<Real>,
    second: Vec<Real>,
}

impl EmergingConv {
    pub fn new(k: usize, channels: usize, first: Vec<Real>, second: Vec<Real>) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::Invalid(format!("window size must be odd, got {k}")));
        }
        let n = k * k * channels * channels;
        if first.len() != n || second.len() != n {
            return Err(Error::Shape(format!("emerging kernels need {n} weights each")));
        }
        for (w, dir) in [(&first, Direction::Forward), (&second, Direction::Backward)] {
            for a in 0..k {
                for b in 0..k {
                    for ci in 0..channels {
                        for co in 0..channels {
                            if !is_free(dir, k, a, b, ci, co) && w[widx(k, channels, channels, a, b, ci, co)] != 0.0 {
                                return Err(Error::MaskViolation(format!(
                                    "{dir:?} kernel tap ({a}, {b}) entry ({ci}, {co})"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(Self {
            k,
            channels,
            first,
            second,
        })
    }

    pub fn identity(k: usize, channels: usize) -> Self {
        let p = k / 2;
        let mut w = vec![0.0; k * k * channels * channels];
        for c in 0..channels {
            w[widx(k, channels, channels, p, p, c, c)] = 1.0;
        }
        Self::new(k, channels, w.clone(), w).unwrap()
    }

    /// Masked Gaussian weights; center diagonals have magnitude in
    /// `[min_diag, min_diag + 1)` with random sign.
    pub fn random(k: usize, channels: usize, std: Real, min_diag: Real, rng: &mut impl Rng) -> Self {
        let p = k / 2;
        let mut make = |dir: Direction| {
            let mut w = rng::normal_vec(rng, k * k * channels * channels, std);
            for a in 0..k {
                for b in 0..k {
                    for ci in 0..channels {
                        for co in 0..channels {
                            let q = widx(k, channels, channels, a, b, ci, co);
                            if !is_free(dir, k, a, b, ci, co) {
                                w[q] = 0.0;
                            } else if (a, b, ci) == (p, p, co) {
                                let mag = min_diag + rng::uniform(rng);
                                w[q] = if rng.random::<bool>() { mag } else { -mag };
                            }
                        }
                    }
                }
            }
            w
        };
        let first = make(Direction::Forward);
        let second = make(Direction::Backward);
        Self::new(k, channels, first, second).unwrap()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn center(&self, w: &[Real]) -> Vec<Real> {
        let (k, c) = (self.k, self.channels);
        let start = widx(k, c, c, k / 2, k / 2, 0, 0);
        w[start..start + c * c].to_vec()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.dims3()?.2 != self.channels {
            return Err(Error::Shape(format!(
                "image has {} channels, kernels expect {}",
                x.dims3()?.2,
                self.channels
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let pad = PadSpec::same(self.k);
        let mid = conv2d(x, &self.first, self.k, self.channels, pad);
        Ok(conv2d(&mid, &self.second, self.k, self.channels, pad))
    }

    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.prepare()?.apply(y)
    }

    pub fn logdet(&self, h: usize, w: usize) -> Result<Real> {
        let c = self.channels;
        let (d1, d2) = (self.center(&self.first), self.center(&self.second));
        let mut s = 0.0;
        for i in 0..c {
            let (a, b) = (d1[i * c + i], d2[i * c + i]);
            if a == 0.0 || b == 0.0 {
                return Err(Error::Singular(format!("zero diagonal tap in channel {i}")));
            }
            s += a.abs().ln() + b.abs().ln();
        }
        Ok((h * w) as Real * s)
    }

    /// Checks both center diagonals once so a batch can reuse the solvers.
    pub fn prepare(&self) -> Result<PreparedEmerging<'_>> {
        let c = self.channels;
        let (d1, d2) = (self.center(&self.first), self.center(&self.second));
        for i in 0..c {
            if d1[i * c + i].abs() <= super::SINGULAR_TOL || d2[i * c + i].abs() <= super::SINGULAR_TOL {
                return Err(Error::Singular(format!("zero diagonal tap in channel {i}")));
            }
        }
        Ok(PreparedEmerging {
            conv: self,
            first: CenterSolve::Ascending(d1),
            second: CenterSolve::Descending(d2),
        })
    }
}

#[derive(Debug, Clone)]
pub struct PreparedEmerging<'a> {
    conv: &'a EmergingConv,
    first: CenterSolve,
    second: CenterSolve,
}

impl PreparedEmerging<'_> {
    pub fn apply(&self, y: &Tensor) -> Result<Tensor> {
        let e = self.conv;
        e.check(y)?;
        let pad = PadSpec::same(e.k);
        let mid = back_substitute(y, &e.second, e.k, pad, ScanOrder::ReverseRaster, &self.second)?;
        back_substitute(&mid, &e.first, e.k, pad, ScanOrder::Raster, &self.first)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn identity_pair_is_identity() {
        let e = EmergingConv::identity(3, 2);
        let x = Tensor::from_fn(4, 5, 2, |i, j, c| (i * 10 + j + c) as Real);
        assert_eq!(e.forward(&x).unwrap(), x);
        assert_eq!(e.inverse(&x).unwrap(), x);
        assert_eq!(e.logdet(4, 5).unwrap(), 0.0);
    }

    #[test]
    fn roundtrip_random() {
        let mut rng = seeded(11);
        for &(h, w, c) in &[(16, 16, 4), (5, 7, 3), (1, 1, 2)] {
            let e = EmergingConv::random(3, c, 0.05, 0.5, &mut rng);
            let x = Tensor::new(&[h, w, c], rng::normal_vec(&mut rng, h * w * c, 1.0)).unwrap();
            let back = e.inverse(&e.forward(&x).unwrap()).unwrap();
            assert!(back.max_abs_diff(&x).unwrap() < 1e-8);
        }
    }

    #[test]
    fn masks_are_opposite_causal() {
        let mut w = vec![0.0; 9];
        w[widx(3, 1, 1, 2, 0, 0, 0)] = 1.0; // below-left of center
        w[widx(3, 1, 1, 1, 1, 0, 0)] = 1.0;
        let id = EmergingConv::identity(3, 1);
        assert!(EmergingConv::new(3, 1, w.clone(), id.second.clone()).is_err());
        assert!(EmergingConv::new(3, 1, id.first.clone(), w).is_ok());
    }
}
