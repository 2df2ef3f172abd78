//! Test-only reference numerics, independent of the library's linear algebra.
#![allow(dead_code)]

use invflow::{Real, Tensor};
use rand::Rng;

/// `ln|det A|` of a row-major `n×n` matrix by Gaussian elimination with
/// partial pivoting; `-inf` when a pivot vanishes.
pub fn log_abs_det(a: &[Real], n: usize) -> Real {
    let mut m = a.to_vec();
    let mut acc = 0.0;
    for col in 0..n {
        let p = (col..n)
            .max_by(|&r, &s| m[r * n + col].abs().total_cmp(&m[s * n + col].abs()))
            .unwrap();
        if m[p * n + col] == 0.0 {
            return Real::NEG_INFINITY;
        }
        if p != col {
            for j in 0..n {
                m.swap(p * n + j, col * n + j);
            }
        }
        let piv = m[col * n + col];
        acc += piv.abs().ln();
        for r in col + 1..n {
            let f = m[r * n + col] / piv;
            if f != 0.0 {
                for j in col..n {
                    m[r * n + j] -= f * m[col * n + j];
                }
            }
        }
    }
    acc
}

/// Determinant of a small matrix by cofactor expansion.
pub fn det_cofactor(a: &[Real], n: usize) -> Real {
    if n == 1 {
        return a[0];
    }
    (0..n)
        .map(|c| {
            let minor: Vec<Real> = (1..n)
                .flat_map(|r| (0..n).filter(move |&j| j != c).map(move |j| a[r * n + j]))
                .collect();
            let s = if c % 2 == 0 { 1.0 } else { -1.0 };
            s * a[c] * det_cofactor(&minor, n - 1)
        })
        .sum()
}

/// Central-difference Jacobian of `f` at `x`, row-major `out × in`.
pub fn fd_jacobian(x: &Tensor, h: Real, f: impl Fn(&Tensor) -> Tensor) -> (Vec<Real>, usize, usize) {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let mut up = x.clone();
        up.data_mut()[i] += h;
        let mut down = x.clone();
        down.data_mut()[i] -= h;
        let (fu, fd) = (f(&up), f(&down));
        cols.push(fu.data().iter().zip(fd.data()).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
    }
    let m = cols[0].len();
    let mut jac = vec![0.0; m * n];
    for (c, col) in cols.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            jac[r * n + c] = *v;
        }
    }
    (jac, m, n)
}

/// `ln|det J|` of `f` at `x` from a finite-difference Jacobian.
pub fn fd_logdet(x: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> Real {
    let (jac, m, n) = fd_jacobian(x, 1e-6, f);
    assert_eq!(m, n, "Jacobian is not square");
    log_abs_det(&jac, n)
}

/// `|a − b| / max(|b|, 1)`.
pub fn rel_err(a: Real, b: Real) -> Real {
    (a - b).abs() / b.abs().max(1.0)
}

/// `|a − b| / |b|`, or `|a|` when `b = 0`.
pub fn strict_rel(a: Real, b: Real) -> Real {
    if b == 0.0 {
        a.abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

pub fn fill_normal(blocks: Vec<&mut [Real]>, std: Real, rng: &mut impl Rng) {
    for b in blocks {
        for v in b {
            *v = std * invflow::rng::normal(rng);
        }
    }
}

pub fn random_image(shape: [usize; 3], std: Real, rng: &mut impl Rng) -> Tensor {
    Tensor::new(&shape, invflow::rng::normal_vec(rng, shape.iter().product(), std)).unwrap()
}
