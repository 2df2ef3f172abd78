//! Inversion timing harness.
//!
//! Each method inverts one channel-mixing layer over a batch of images:
//!
//! * `ours-masked`, `ours-block`: a `k×k` top-left padded convolution, one
//!   raster-order back substitution per image.
//! * `emerging`: two `k×k` causal convolutions in sequence, inverted by two
//!   back substitutions (reverse raster, then raster).
//! * `1x1`: a 1×1 convolution, inverted by multiplying with `W⁻¹`.
//! * `dense-solve`: LU factorization of the full `n×n` matrix followed by one
//!   dense solve per image; skipped above the oracle size guard.
//!
//! Solver setup (diagonal checks, `W⁻¹`, the dense LU) is timed as part of
//! every repetition. One warm-up repetition per method and size is discarded.
//! All methods of a size invert the same inputs, whose hash is reported.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::hint::black_box;
use std::time::Instant;

use rayon::prelude::*;

use crate::invconv::{linalg, ConvKernel, EmergingConv, Variant};
use crate::oracle::{build_matrix, DenseLu, SIZE_GUARD};
use crate::rng::{normal_vec, seeded};
use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    OursMasked,
    OursBlock,
    Emerging,
    Conv1x1,
    DenseSolve,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::OursMasked,
        Method::OursBlock,
        Method::Emerging,
        Method::Conv1x1,
        Method::DenseSolve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::OursMasked => "ours-masked",
            Method::OursBlock => "ours-block",
            Method::Emerging => "emerging",
            Method::Conv1x1 => "1x1",
            Method::DenseSolve => "dense-solve",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown bench method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// `(H, W, C)` image sizes.
    pub sizes: Vec<[usize; 3]>,
    /// Timed repetitions per method and size, at least 5.
    pub repetitions: usize,
    pub batch: usize,
    pub kernel_size: usize,
    pub seed: u64,
    pub threads: usize,
    pub methods: Vec<Method>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![[16, 16, 4], [32, 32, 12]],
            repetitions: 5,
            batch: 100,
            kernel_size: 3,
            seed: 0,
            threads: 1,
            methods: Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub size: [usize; 3],
    pub mean_s: Real,
    pub std_s: Real,
    /// `mean_s / mean_s(ours-masked)` at the same size.
    pub ratio_vs_ours: Option<Real>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Hash of the shared input batch per size.
    pub input_hashes: Vec<([usize; 3], u64)>,
    /// Methods not run at a size, with the reason.
    pub skipped: Vec<(Method, [usize; 3], String)>,
    pub repetitions: usize,
    pub batch: usize,
    pub threads: usize,
}

pub const CSV_HEADER: &str = "method,H,W,C,mean_s,std_s,ratio_vs_ours";

impl BenchReport {
    pub fn row(&self, method: Method, size: [usize; 3]) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.size == size)
    }

    /// `mean(emerging) / mean(ours-masked)` at `size`.
    pub fn emerging_ratio(&self, size: [usize; 3]) -> Option<Real> {
        Some(self.row(Method::Emerging, size)?.mean_s / self.row(Method::OursMasked, size)?.mean_s)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let ratio = r.ratio_vs_ours.map(|v| format!("{v:.4}")).unwrap_or_default();
            s += &format!(
                "{},{},{},{},{:.6e},{:.6e},{}\n",
                r.method, r.size[0], r.size[1], r.size[2], r.mean_s, r.std_s, ratio
            );
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "batch {} images, {} repetitions, {} thread(s)\n",
            self.batch, self.repetitions, self.threads
        );
        for (size, hash) in &self.input_hashes {
            s += &format!("inputs {}x{}x{}: hash {hash:016x}\n", size[0], size[1], size[2]);
        }
        s += &format!(
            "{:<12} {:>12} {:>12} {:>12} {:>8}\n",
            "method", "size", "mean_s", "std_s", "ratio"
        );
        for r in &self.rows {
            let ratio = r.ratio_vs_ours.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
            s += &format!(
                "{:<12} {:>12} {:>12.6} {:>12.6} {:>8}\n",
                r.method.name(),
                format!("{}x{}x{}", r.size[0], r.size[1], r.size[2]),
                r.mean_s,
                r.std_s,
                ratio
            );
        }
        for (m, size, why) in &self.skipped {
            s += &format!("{m} skipped at {}x{}x{}: {why}\n", size[0], size[1], size[2]);
        }
        s
    }
}

fn hash_batch(batch: &[Tensor]) -> u64 {
    let mut h = DefaultHasher::new();
    for t in batch {
        t.shape().hash(&mut h);
        for v in t.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn mean_std(v: &[Real]) -> (Real, Real) {
    let n = v.len() as Real;
    let mean = v.iter().sum::<Real>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<Real>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// One inversion of the whole batch; returns a checksum so the work cannot
/// be optimized away.
type Invert<'a> = Box<dyn Fn(&[Tensor]) -> Result<Real> + Sync + 'a>;

fn checksum(xs: Vec<Tensor>) -> Real {
    xs.iter().map(|x| x.data()[0]).sum()
}

fn inverter<'a>(method: Method, size: [usize; 3], k: usize, seed: u64) -> Result<Option<Invert<'a>>> {
    let [h, w, c] = size;
    let mut rng = seeded(seed ^ 0x5eed);
    Ok(Some(match method {
        Method::OursMasked | Method::OursBlock => {
            let variant = if method == Method::OursMasked {
                Variant::MaskedTriangular
            } else {
                Variant::BlockTriangular
            };
            let kernel = ConvKernel::random(k, c, variant, 0.05, 1.0, &mut rng);
            Box::new(move |ys| {
                let p = kernel.prepare_inverse()?;
                Ok(checksum(ys.par_iter().map(|y| p.apply(y)).collect::<Result<_>>()?))
            })
        }
        Method::Emerging => {
            let conv = EmergingConv::random(k, c, 0.05, 1.0, &mut rng);
            Box::new(move |ys| {
                let p = conv.prepare()?;
                Ok(checksum(ys.par_iter().map(|y| p.apply(y)).collect::<Result<_>>()?))
            })
        }
        Method::Conv1x1 => {
            let mut wgt = normal_vec(&mut rng, c * c, 0.05);
            (0..c).for_each(|i| wgt[i * c + i] += 1.0);
            Box::new(move |ys| {
                let inv = linalg::inverse(&wgt, c)?;
                Ok(checksum(ys.par_iter().map(|y| y.matmul_channels(&inv, c)).collect::<Result<_>>()?))
            })
        }
        Method::DenseSolve => {
            if h * w * c > SIZE_GUARD {
                return Ok(None);
            }
            let kernel = ConvKernel::random(k, c, Variant::MaskedTriangular, 0.05, 1.0, &mut rng);
            let m = build_matrix(&kernel, h, w, kernel.padding())?;
            Box::new(move |ys| {
                let lu = DenseLu::new(m.entries(), m.rows());
                let xs = ys
                    .par_iter()
                    .map(|y| Tensor::new(y.shape(), lu.solve(y.data())?))
                    .collect::<Result<_>>()?;
                Ok(checksum(xs))
            })
        }
    }))
}

/// Runs every method at every size on a dedicated thread pool.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repetitions < 5 {
        return Err(Error::Invalid(format!("need at least 5 repetitions, got {}", cfg.repetitions)));
    }
    if cfg.batch == 0 || cfg.threads == 0 || cfg.kernel_size % 2 == 0 {
        return Err(Error::Invalid("batch and threads must be positive, kernel size odd".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| run_on_pool(cfg))
}

fn run_on_pool(cfg: &BenchConfig) -> Result<BenchReport> {
    let mut report = BenchReport {
        rows: Vec::new(),
        input_hashes: Vec::new(),
        skipped: Vec::new(),
        repetitions: cfg.repetitions,
        batch: cfg.batch,
        threads: cfg.threads,
    };
    for &size in &cfg.sizes {
        let [h, w, c] = size;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Invalid(format!("empty bench size {h}x{w}x{c}")));
        }
        let mut rng = seeded(cfg.seed);
        let batch: Vec<Tensor> = (0..cfg.batch)
            .map(|_| Tensor::new(&[h, w, c], normal_vec(&mut rng, h * w * c, 1.0)))
            .collect::<Result<_>>()?;
        report.input_hashes.push((size, hash_batch(&batch)));
        let first = report.rows.len();
        for &method in &cfg.methods {
            let Some(invert) = inverter(method, size, cfg.kernel_size, cfg.seed)? else {
                report.skipped.push((
                    method,
                    size,
                    format!("n = {} exceeds {SIZE_GUARD}", h * w * c),
                ));
                continue;
            };
            black_box(invert(&batch)?);
            let mut times = Vec::with_capacity(cfg.repetitions);
            for _ in 0..cfg.repetitions {
                let t = Instant::now();
                black_box(invert(black_box(&batch))?);
                times.push(t.elapsed().as_secs_f64() as Real);
            }
            let (mean_s, std_s) = mean_std(&times);
            report.rows.push(BenchRow {
                method,
                size,
                mean_s,
                std_s,
                ratio_vs_ours: None,
            });
        }
        let base = report.rows[first..]
            .iter()
            .find(|r| r.method == Method::OursMasked)
            .map(|r| r.mean_s);
        for r in &mut report.rows[first..] {
            r.ratio_vs_ours = base.map(|b| r.mean_s / b);
        }
    }
    Ok(report)
}
