//! Dense LU with partial pivoting: determinants, solves and rank.

use crate::{Error, Real, Result};

#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<Real>,
    perm: Vec<usize>,
    odd_swaps: bool,
    scale: Real,
}

impl DenseLu {
    /// Factors a row-major `n×n` matrix. Zero pivot columns are skipped
    /// rather than rejected, so singular inputs still yield `det = 0`.
    pub fn new(a: &[Real], n: usize) -> Self {
        assert_eq!(a.len(), n * n, "matrix is not {n}x{n}");
        let scale = a.iter().fold(0.0 as Real, |m, v| m.max(v.abs()));
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut odd_swaps = false;
        for col in 0..n {
            let mut piv = col;
            let mut best = lu[col * n + col].abs();
            for r in col + 1..n {
                let v = lu[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                continue;
            }
            if piv != col {
                let (lo, hi) = lu.split_at_mut(piv * n);
                lo[col * n..col * n + n].swap_with_slice(&mut hi[..n]);
                perm.swap(piv, col);
                odd_swaps = !odd_swaps;
            }
            let p = lu[col * n + col];
            let (top, rest) = lu.split_at_mut((col + 1) * n);
            let pivot_row = &top[col * n..];
            for row in rest.chunks_exact_mut(n) {
                let f = row[col] / p;
                if f == 0.0 {
                    continue;
                }
                row[col] = f;
                for (x, &u) in row[col + 1..].iter_mut().zip(&pivot_row[col + 1..]) {
                    *x -= f * u;
                }
            }
        }
        Self {
            n,
            lu,
            perm,
            odd_swaps,
            scale,
        }
    }

    pub fn pivots(&self) -> impl Iterator<Item = Real> + '_ {
        (0..self.n).map(move |i| self.lu[i * self.n + i])
    }

    pub fn det(&self) -> Real {
        let sign = if self.odd_swaps { -1.0 } else { 1.0 };
        sign * self.pivots().product::<Real>()
    }

    /// `(sign, ln|det|)`; sign is 0 for a singular matrix.
    pub fn log_abs_det(&self) -> (Real, Real) {
        let mut sign: Real = if self.odd_swaps { -1.0 } else { 1.0 };
        let mut acc = 0.0;
        for p in self.pivots() {
            if p == 0.0 {
                return (0.0, Real::NEG_INFINITY);
            }
            sign *= p.signum();
            acc += p.abs().ln();
        }
        (sign, acc)
    }

    /// Number of pivots above `rel_tol · max|A|`.
    pub fn rank(&self, rel_tol: Real) -> usize {
        let thresh = rel_tol * self.scale;
        self.pivots().filter(|p| p.abs() > thresh).count()
    }

    pub fn is_singular(&self) -> bool {
        let thresh = self.n as Real * Real::EPSILON * self.scale;
        self.scale == 0.0 || self.pivots().any(|p| p.abs() <= thresh)
    }

    pub fn solve(&self, y: &[Real]) -> Result<Vec<Real>> {
        let n = self.n;
        if y.len() != n {
            return Err(Error::Shape(format!("right-hand side has {} entries, expected {n}", y.len())));
        }
        if self.is_singular() {
            return Err(Error::Singular("dense matrix is singular to working precision".into()));
        }
        let mut x: Vec<Real> = self.perm.iter().map(|&p| y[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: Real = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: Real = row.iter().zip(&x[i + 1..]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        Ok(x)
    }
}

pub fn dense_det(m: &[Real], n: usize) -> Real {
    DenseLu::new(m, n).det()
}

pub fn dense_solve(m: &[Real], n: usize, y: &[Real]) -> Result<Vec<Real>> {
    DenseLu::new(m, n).solve(y)
}
