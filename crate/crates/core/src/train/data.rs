//! 8-bit datasets and dequantization.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::io::read_pnm;
use crate::rng::{self, seeded};
use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// One to three soft Gaussian bumps of random color on black.
    GaussianBlobs,
    /// Two-level checkerboards with random cell size, phase and levels.
    Checkerboard,
    /// Random horizontal or vertical stripes.
    Bars,
    /// Every PGM/PPM file of a directory, in file-name order.
    ImageFolder,
    /// Independent uniform pixels over all 256 levels.
    Uniform,
    /// Independent pixels `clamp(round(mean + std·n), 0, 255)`, `n ~ N(0, 1)`.
    GaussianIid,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::GaussianBlobs => "gaussian-blobs",
            DatasetKind::Checkerboard => "checkerboard",
            DatasetKind::Bars => "bars",
            DatasetKind::ImageFolder => "image-folder",
            DatasetKind::Uniform => "uniform",
            DatasetKind::GaussianIid => "gaussian-iid",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            DatasetKind::GaussianBlobs,
            DatasetKind::Checkerboard,
            DatasetKind::Bars,
            DatasetKind::ImageFolder,
            DatasetKind::Uniform,
            DatasetKind::GaussianIid,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Invalid(format!("unknown dataset kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Number of images; ignored for image folders.
    pub size: usize,
    pub seed: u64,
    pub path: Option<PathBuf>,
    /// Mean and standard deviation of `gaussian-iid` pixels, in 8-bit units.
    pub noise_mean: Real,
    pub noise_std: Real,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Checkerboard,
            height: 8,
            width: 8,
            channels: 1,
            size: 512,
            seed: 0,
            path: None,
            noise_mean: 128.0,
            noise_std: 16.0,
        }
    }
}

/// 8-bit images in `(H, W, C)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub images: Vec<Vec<u8>>,
}

fn quantize(v: Real) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn blobs(spec: &DatasetSpec, rng: &mut impl Rng) -> Vec<u8> {
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let scale = h.max(w) as Real;
    let n = rng.random_range(1..=3);
    let bumps: Vec<(Real, Real, Real, Vec<Real>)> = (0..n)
        .map(|_| {
            let ci = rng::uniform(rng) * h as Real;
            let cj = rng::uniform(rng) * w as Real;
            let sigma = scale * (0.1 + 0.2 * rng::uniform(rng));
            let color = (0..c).map(|_| 100.0 + 155.0 * rng::uniform(rng)).collect();
            (ci, cj, sigma, color)
        })
        .collect();
    let mut out = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let v: Real = bumps
                    .iter()
                    .map(|(ci, cj, s, col)| {
                        let d2 = (i as Real + 0.5 - ci).powi(2) + (j as Real + 0.5 - cj).powi(2);
                        col[ch] * (-0.5 * d2 / (s * s)).exp()
                    })
                    .sum();
                out.push(quantize(v));
            }
        }
    }
    out
}

fn checkerboard(spec: &DatasetSpec, rng: &mut impl Rng) -> Vec<u8> {
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let cell = [1usize, 2, 4][rng.random_range(0..3)];
    let phase = rng.random_range(0..2usize);
    let low: Vec<u8> = (0..c).map(|_| rng.random_range(0..64)).collect();
    let high: Vec<u8> = (0..c).map(|_| rng.random_range(192..=255)).collect();
    let mut out = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            let on = (i / cell + j / cell + phase) % 2 == 1;
            for ch in 0..c {
                out.push(if on { high[ch] } else { low[ch] });
            }
        }
    }
    out
}

fn bars(spec: &DatasetSpec, rng: &mut impl Rng) -> Vec<u8> {
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let vertical: bool = rng.random();
    let lines: Vec<bool> = (0..if vertical { w } else { h }).map(|_| rng.random()).collect();
    let level: Vec<u8> = (0..c).map(|_| rng.random_range(128..=255)).collect();
    let mut out = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            let on = lines[if vertical { j } else { i }];
            for &l in &level {
                out.push(if on { l } else { 0 });
            }
        }
    }
    out
}

fn image_folder(spec: &DatasetSpec) -> Result<Vec<Vec<u8>>> {
    let dir = spec
        .path
        .as_deref()
        .ok_or_else(|| Error::Config("image-folder dataset needs a path".into()))?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm" | "pnm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no PGM/PPM images in {}", dir.display())));
    }
    files
        .iter()
        .map(|f| {
            let img = read_pnm(f)?;
            if (img.height, img.width, img.channels) != (spec.height, spec.width, spec.channels) {
                return Err(Error::Shape(format!(
                    "{} is {}x{}x{}, dataset expects {}x{}x{}",
                    f.display(),
                    img.height,
                    img.width,
                    img.channels,
                    spec.height,
                    spec.width,
                    spec.channels
                )));
            }
            Ok(img.pixels)
        })
        .collect()
}

impl Dataset {
    /// Regenerates the dataset deterministically from `spec.seed`.
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        if spec.height == 0 || spec.width == 0 || spec.channels == 0 {
            return Err(Error::Config("dataset dimensions must be positive".into()));
        }
        let mut rng = seeded(spec.seed);
        let n = spec.height * spec.width * spec.channels;
        let images = match spec.kind {
            DatasetKind::ImageFolder => image_folder(spec)?,
            _ if spec.size == 0 => return Err(Error::Config("dataset size must be positive".into())),
            DatasetKind::GaussianBlobs => (0..spec.size).map(|_| blobs(spec, &mut rng)).collect(),
            DatasetKind::Checkerboard => (0..spec.size).map(|_| checkerboard(spec, &mut rng)).collect(),
            DatasetKind::Bars => (0..spec.size).map(|_| bars(spec, &mut rng)).collect(),
            DatasetKind::Uniform => (0..spec.size)
                .map(|_| (0..n).map(|_| rng.random::<u8>()).collect())
                .collect(),
            DatasetKind::GaussianIid => (0..spec.size)
                .map(|_| {
                    (0..n)
                        .map(|_| quantize(spec.noise_mean + spec.noise_std * rng::normal(&mut rng)))
                        .collect()
                })
                .collect(),
        };
        Ok(Self {
            height: spec.height,
            width: spec.width,
            channels: spec.channels,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Dequantizes images `idx` with fresh noise from `rng`, in order.
    pub fn batch(&self, idx: &[usize], rng: &mut impl Rng) -> Vec<Tensor> {
        idx.iter()
            .map(|&i| dequantize(&self.images[i], [self.height, self.width, self.channels], rng))
            .collect()
    }

    /// A random permutation of the image indices.
    pub fn shuffled(&self, rng: &mut impl Rng) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx
    }

    pub fn save_image(&self, i: usize, path: &Path) -> Result<()> {
        crate::io::write_pnm(path, self.height, self.width, self.channels, &self.images[i])
    }
}

/// `x = (v + u)/256` with `u ~ U[0, 1)` per pixel, so `x ∈ [0, 1)`.
pub fn dequantize(pixels: &[u8], shape: [usize; 3], rng: &mut impl Rng) -> Tensor {
    let data = pixels.iter().map(|&v| (v as Real + rng::uniform(rng)) / 256.0).collect();
    Tensor::new(&shape, data).expect("pixel count matches the shape")
}
