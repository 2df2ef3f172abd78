//! Central finite differences against analytic gradients.

use crate::{Real, Result};

/// `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h` for every coordinate.
pub fn central_difference(theta: &[Real], h: Real, mut f: impl FnMut(&[Real]) -> Result<Real>) -> Result<Vec<Real>> {
    let mut t = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = t[i];
        t[i] = orig + h;
        let up = f(&t)?;
        t[i] = orig - h;
        let down = f(&t)?;
        t[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Re-estimates every coordinate whose relative error against `analytic`
/// exceeds `tol` with each of the smaller `steps`, keeping the closest
/// estimate. A ReLU kink within `±h` of the evaluation point spoils a single
/// central difference but not all of a decreasing sequence of them.
pub fn refine(
    theta: &[Real],
    analytic: &[Real],
    numeric: &mut [Real],
    tol: Real,
    floor: Real,
    steps: &[Real],
    mut f: impl FnMut(&[Real]) -> Result<Real>,
) -> Result<()> {
    let rel = |a: Real, n: Real| (a - n).abs() / a.abs().max(n.abs()).max(floor);
    let mut t = theta.to_vec();
    for i in 0..theta.len() {
        for &h in steps {
            if rel(analytic[i], numeric[i]) <= tol {
                break;
            }
            t[i] = theta[i] + h;
            let up = f(&t)?;
            t[i] = theta[i] - h;
            let down = f(&t)?;
            t[i] = theta[i];
            let n = (up - down) / (2.0 * h);
            if rel(analytic[i], n) < rel(analytic[i], numeric[i]) {
                numeric[i] = n;
            }
        }
    }
    Ok(())
}

/// Worst coordinate of a gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub index: usize,
    pub analytic: Real,
    pub numeric: Real,
    pub rel_error: Real,
}

/// `|a − n| / max(|a|, |n|, floor)` maximized over coordinates. The floor
/// keeps coordinates whose true gradient vanishes from dividing round-off
/// by zero.
pub fn compare(analytic: &[Real], numeric: &[Real], floor: Real) -> GradReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = GradReport {
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        rel_error: 0.0,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if e > worst.rel_error || !e.is_finite() {
            worst = GradReport {
                index: i,
                analytic: a,
                numeric: n,
                rel_error: e,
            };
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = central_difference(&[1.0, -2.0], 1e-5, |t| Ok(t[0] * t[0] + 3.0 * t[1])).unwrap();
        let r = compare(&[2.0, 3.0], &g, 1e-8);
        assert!(r.rel_error < 1e-9);
    }
}
