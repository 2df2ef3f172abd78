//! Brute-force reference for the invertible convolution.
//!
//! The convolution matrix is materialized column by column from unit images
//! pushed through a literal transcription of the padded-convolution
//! definition, deliberately separate from the fast paths in
//! [`crate::invconv`]. Everything here is `O(n²)` memory and `O(n³)` time.

pub mod dense;

use std::fmt;

pub use dense::{dense_det, dense_solve, DenseLu};

use crate::invconv::{ConvKernel, Variant};
use crate::{pad, Error, PadSpec, Real, Result, Tensor};

/// Largest `H·W·C` the oracle will materialize.
pub const SIZE_GUARD: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub kernel: String,
    pub height: usize,
    pub width: usize,
    pub pad: PadSpec,
}

/// Row-major matrix of `x ↦ pad(x) ∗ K` over flattened images.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseConvMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Real>,
    pub provenance: Provenance,
}

/// Literal `Y[i, j, co] = Σ_{a,b} Σ_ci pad(X)[i + a, j + b, ci] · K[a, b, ci, co]`.
pub fn reference_conv(x: &Tensor, kernel: &ConvKernel, spec: PadSpec) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    if c != kernel.channels() {
        return Err(Error::Shape(format!("{c} channels vs kernel {}", kernel.channels())));
    }
    let k = kernel.k();
    let p = pad(x, spec);
    let (ph, pw) = (h + spec.top + spec.bottom, w + spec.left + spec.right);
    if ph < k || pw < k {
        return Err(Error::Shape("padded image smaller than the window".into()));
    }
    let (oh, ow) = (ph - k + 1, pw - k + 1);
    Ok(Tensor::from_fn(oh, ow, c, |i, j, co| {
        let mut s = 0.0;
        for a in 0..k {
            for b in 0..k {
                for ci in 0..c {
                    s += p.get(i + a, j + b, ci) * kernel.weight(a, b, ci, co);
                }
            }
        }
        s
    }))
}

/// Materializes the convolution matrix: column `q` is the flattened
/// response to the `q`-th unit image.
pub fn build_matrix(kernel: &ConvKernel, h: usize, w: usize, spec: PadSpec) -> Result<DenseConvMatrix> {
    let c = kernel.channels();
    let cols = h * w * c;
    if cols > SIZE_GUARD {
        return Err(Error::SizeGuard {
            n: cols,
            limit: SIZE_GUARD,
        });
    }
    let mut unit = Tensor::zeros(&[h, w, c]);
    let probe = reference_conv(&unit, kernel, spec)?;
    let rows = probe.len();
    if rows > SIZE_GUARD {
        return Err(Error::SizeGuard {
            n: rows,
            limit: SIZE_GUARD,
        });
    }
    let mut entries = vec![0.0; rows * cols];
    for q in 0..cols {
        unit.data_mut()[q] = 1.0;
        let col = reference_conv(&unit, kernel, spec)?;
        unit.data_mut()[q] = 0.0;
        for (r, &v) in col.data().iter().enumerate() {
            entries[r * cols + q] = v;
        }
    }
    Ok(DenseConvMatrix {
        rows,
        cols,
        entries,
        provenance: Provenance {
            kernel: format!("{} k={} C={}", kernel.variant().name(), kernel.k(), c),
            height: h,
            width: w,
            pad: spec,
        },
    })
}

impl DenseConvMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[Real] {
        &self.entries
    }

    pub fn get(&self, r: usize, c: usize) -> Real {
        self.entries[r * self.cols + c]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// `M·v`.
    pub fn apply(&self, v: &[Real]) -> Result<Vec<Real>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!("vector of {} for {} columns", v.len(), self.cols)));
        }
        Ok(self
            .entries
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn square(&self) -> Result<usize> {
        if !self.is_square() {
            return Err(Error::Shape(format!("{}x{} matrix is not square", self.rows, self.cols)));
        }
        Ok(self.rows)
    }

    pub fn lu(&self) -> Result<DenseLu> {
        Ok(DenseLu::new(&self.entries, self.square()?))
    }

    pub fn det(&self) -> Result<Real> {
        Ok(self.lu()?.det())
    }

    pub fn solve(&self, y: &[Real]) -> Result<Vec<Real>> {
        self.lu()?.solve(y)
    }

    /// Rank-2 tensor `(rows, cols)` for dumping in the raw format.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.rows, self.cols], self.entries.clone()).unwrap()
    }
}

/// Zero pattern expected from a convolution matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    /// Nothing above the diagonal; diagonal entry `q` equals entry `q mod period`.
    Lower { period: usize },
    /// Nothing above the `block×block` diagonal blocks; all diagonal blocks equal.
    BlockLower { block: usize },
}

impl Structure {
    /// The structure an invertible kernel's matrix must have.
    pub fn for_kernel(kernel: &ConvKernel) -> Self {
        match kernel.variant() {
            Variant::MaskedTriangular => Structure::Lower {
                period: kernel.channels(),
            },
            Variant::BlockTriangular => Structure::BlockLower {
                block: kernel.channels(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    AboveDiagonal { value: Real },
    DiagonalMismatch { value: Real, expected: Real },
    NotSquare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub row: usize,
    pub col: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangularReport {
    pub structure: Structure,
    pub violation: Option<Violation>,
    /// Diagonal period (for `Lower`) or the first diagonal block, row-major
    /// (for `BlockLower`).
    pub diagonal: Vec<Real>,
}

impl TriangularReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

impl fmt::Display for TriangularReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.structure {
            Structure::Lower { .. } => "lower triangular",
            Structure::BlockLower { .. } => "block lower triangular",
        };
        match &self.violation {
            None => write!(f, "{what}: pass, diagonal {:?}", self.diagonal),
            Some(v) => match v.kind {
                ViolationKind::AboveDiagonal { value } => {
                    write!(f, "{what}: FAIL, entry ({}, {}) = {value:e} above the diagonal", v.row, v.col)
                }
                ViolationKind::DiagonalMismatch { value, expected } => write!(
                    f,
                    "{what}: FAIL, diagonal entry ({}, {}) = {value:e}, expected {expected:e}",
                    v.row, v.col
                ),
                ViolationKind::NotSquare => write!(f, "{what}: FAIL, matrix is not square"),
            },
        }
    }
}

/// Checks the zero pattern exactly and reports the first violation in
/// row-major order.
pub fn check_triangular(m: &DenseConvMatrix, structure: Structure) -> TriangularReport {
    let n = m.rows;
    let (block, period) = match structure {
        Structure::Lower { period } => (1, period.max(1)),
        Structure::BlockLower { block } => (block.max(1), 1),
    };
    let diagonal: Vec<Real> = match structure {
        Structure::Lower { .. } => (0..period.min(n)).map(|q| m.get(q, q)).collect(),
        Structure::BlockLower { .. } => {
            let b = block.min(n);
            (0..b * b).map(|q| m.get(q / b, q % b)).collect()
        }
    };
    let mut report = TriangularReport {
        structure,
        violation: None,
        diagonal,
    };
    if !m.is_square() || n % block != 0 {
        report.violation = Some(Violation {
            row: 0,
            col: 0,
            kind: ViolationKind::NotSquare,
        });
        return report;
    }
    for r in 0..n {
        for c in 0..n {
            let v = m.get(r, c);
            let (rb, cb) = (r / block, c / block);
            let kind = if cb > rb {
                (v != 0.0).then_some(ViolationKind::AboveDiagonal { value: v })
            } else if cb == rb {
                match structure {
                    Structure::Lower { .. } if c > r => {
                        (v != 0.0).then_some(ViolationKind::AboveDiagonal { value: v })
                    }
                    Structure::Lower { .. } if c == r => {
                        let expected = report.diagonal[r % period];
                        (v != expected).then_some(ViolationKind::DiagonalMismatch { value: v, expected })
                    }
                    Structure::Lower { .. } => None,
                    Structure::BlockLower { .. } => {
                        let expected = report.diagonal[(r % block) * block + c % block];
                        (v != expected).then_some(ViolationKind::DiagonalMismatch { value: v, expected })
                    }
                }
            } else {
                None
            };
            if let Some(kind) = kind {
                report.violation = Some(Violation { row: r, col: c, kind });
                return report;
            }
        }
    }
    report
}

/// Oracle cross-check of one kernel on `h×w` images with top-left padding.
#[derive(Debug, Clone)]
pub struct KernelCheck {
    pub triangular: TriangularReport,
    pub det: Real,
    pub sign: Real,
    pub log_abs_det: Real,
    pub rank: usize,
    pub n: usize,
}

pub fn check_kernel(kernel: &ConvKernel, h: usize, w: usize) -> Result<KernelCheck> {
    let m = build_matrix(kernel, h, w, kernel.padding())?;
    let triangular = check_triangular(&m, Structure::for_kernel(kernel));
    let lu = m.lu()?;
    let (sign, log_abs_det) = lu.log_abs_det();
    Ok(KernelCheck {
        triangular,
        det: lu.det(),
        sign,
        log_abs_det,
        rank: lu.rank(1e-10),
        n: m.rows,
    })
}
