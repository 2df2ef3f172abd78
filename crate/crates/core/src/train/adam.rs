//! Adam with bias-corrected moments and global-norm gradient clipping.

use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    m: Vec<Real>,
    v: Vec<Real>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: Real) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of `params` against `grads`. Fails without touching
    /// anything if a gradient is not finite.
    pub fn step(&mut self, params: &mut [Real], grads: &[Real]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient {i} is {}", grads[i])));
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Real]) -> Real {
    grads.iter().map(|g| g * g).sum::<Real>().sqrt()
}

/// Rescales `grads` to norm `max_norm` if it is larger; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut [Real], max_norm: Real) -> Real {
    let n = global_norm(grads);
    if n > max_norm && n.is_finite() {
        let s = max_norm / n;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut a = Adam::new(3, 0.001);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            a.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut a = Adam::new(2, 0.001);
        let mut p = vec![0.0, 0.0];
        let mut prev = p.clone();
        for _ in 0..200 {
            prev.copy_from_slice(&p);
            a.step(&mut p, &[3.0, -0.02]).unwrap();
        }
        assert!(((prev[0] - p[0]) - 0.001).abs() < 1e-8);
        assert!(((p[1] - prev[1]) - 0.001).abs() < 1e-6);
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut a = Adam::new(1, 0.1);
        let mut p = vec![1.0];
        assert!(matches!(a.step(&mut p, &[Real::NAN]), Err(Error::NonFinite(_))));
        assert_eq!(p, vec![1.0]);
        assert_eq!(a.steps(), 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_global_norm(&mut g, 50.0), 50.0);
        assert_eq!(g, vec![30.0, 40.0]);
        let mut g = vec![300.0, 400.0];
        assert_eq!(clip_global_norm(&mut g, 50.0), 500.0);
        assert!((global_norm(&g) - 50.0).abs() < 1e-12);
    }
}
