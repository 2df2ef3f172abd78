//! Small dense factorizations for the `C×C` diagonal tap.

use crate::{Error, Real, Result};

/// `P·A = L·U` with partial pivoting, stored compactly.
#[derive(Debug, Clone)]
pub struct SmallLu {
    n: usize,
    lu: Vec<Real>,
    perm: Vec<usize>,
    swaps: usize,
}

impl SmallLu {
    /// Factors a row-major `n×n` matrix. Exactly zero pivots are reported as
    /// singular; near-singularity is the caller's call via [`SmallLu::det`].
    pub fn factor(a: &[Real], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        for col in 0..n {
            let (piv, mag) = (col..n)
                .map(|r| (r, lu[r * n + col].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if mag == 0.0 {
                return Err(Error::Singular(format!("zero pivot in column {col}")));
            }
            if piv != col {
                for c in 0..n {
                    lu.swap(piv * n + c, col * n + c);
                }
                perm.swap(piv, col);
                swaps += 1;
            }
            let p = lu[col * n + col];
            for r in col + 1..n {
                let f = lu[r * n + col] / p;
                lu[r * n + col] = f;
                for c in col + 1..n {
                    lu[r * n + c] -= f * lu[col * n + c];
                }
            }
        }
        Ok(Self { n, lu, perm, swaps })
    }

    pub fn det(&self) -> Real {
        let sign = if self.swaps % 2 == 0 { 1.0 } else { -1.0 };
        (0..self.n).map(|i| self.lu[i * self.n + i]).product::<Real>() * sign
    }

    /// `ln|det A|`, safe against overflow.
    pub fn log_abs_det(&self) -> Real {
        (0..self.n).map(|i| self.lu[i * self.n + i].abs().ln()).sum()
    }

    /// Solves `A·x = b` into `x`.
    pub fn solve_into(&self, b: &[Real], x: &mut [Real]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[self.perm[i]];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
    }
}

/// Transpose of a row-major square matrix.
pub fn transpose(a: &[Real], n: usize) -> Vec<Real> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

/// Row-major product of two square matrices.
pub fn matmul(a: &[Real], b: &[Real], n: usize) -> Vec<Real> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for m in 0..n {
            let av = a[i * n + m];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[m * n + j];
            }
        }
    }
    out
}

/// Inverse of a row-major square matrix.
pub fn inverse(a: &[Real], n: usize) -> Result<Vec<Real>> {
    let lu = SmallLu::factor(a, n)?;
    let mut inv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        lu.solve_into(&e, &mut col);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Ok(inv)
}
