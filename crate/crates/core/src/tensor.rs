//! Dense tensors in row-major, channel-fastest layout.
//!
//! An image has shape `(H, W, C)` and a batch `(N, H, W, C)`. Element
//! `(i, j, c)` of an image lives at flat offset `c + C·j + C·W·i`, so the
//! flat order is the lexicographic order of `(row, column, channel)`.

use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

/// Zero padding widths `(top, bottom, left, right)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PadSpec {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl PadSpec {
    pub const NONE: PadSpec = PadSpec::new(0, 0, 0, 0);

    pub const fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        Self {
            top,
            bottom,
            left,
            right,
        }
    }

    /// The `(k−1, 0, k−1, 0)` padding under which a `k×k` convolution is
    /// (block) lower triangular.
    pub const fn top_left(k: usize) -> Self {
        Self::new(k - 1, 0, k - 1, 0)
    }

    /// Symmetric "same" padding for odd `k`.
    pub const fn same(k: usize) -> Self {
        let p = k / 2;
        Self::new(p, p, p, p)
    }
}

/// Flat offset of `(i, j, c)` in an `(h, w, ch)` image: `c + ch·j + ch·w·i`.
pub fn flat_index(i: usize, j: usize, c: usize, shape: (usize, usize, usize)) -> Result<usize> {
    let (h, w, ch) = shape;
    if i >= h || j >= w || c >= ch {
        return Err(Error::IndexOutOfRange {
            i,
            j,
            c,
            h,
            w,
            ch,
        });
    }
    Ok(c + ch * j + ch * w * i)
}

/// Inverse of [`flat_index`].
pub fn unflatten_index(q: usize, shape: (usize, usize, usize)) -> (usize, usize, usize) {
    let (_, w, ch) = shape;
    (q / (w * ch), (q / ch) % w, q % ch)
}

/// Zero-pads an image. `out[i, j, c] = x[i − top, j − left, c]` where that
/// index exists, zero elsewhere.
pub fn pad(x: &Tensor, spec: PadSpec) -> Tensor {
    let (h, w, c) = x.dims3().expect("pad expects an (H, W, C) image");
    let (ph, pw) = (h + spec.top + spec.bottom, w + spec.left + spec.right);
    let mut out = Tensor::zeros(&[ph, pw, c]);
    for i in 0..h {
        let src = &x.data[i * w * c..(i + 1) * w * c];
        let start = ((i + spec.top) * pw + spec.left) * c;
        out.data[start..start + w * c].copy_from_slice(src);
    }
    out
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<Real>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: Real) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds an `(h, w, c)` image from a function of `(i, j, c)`.
    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> Real) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    data.push(f(i, j, k));
                }
            }
        }
        Self {
            shape: vec![h, w, c],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(H, W, C)` of a rank-3 image.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Shape(format!(
                "expected an (H, W, C) image, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// `(N, H, W, C)` of a rank-4 batch.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => Err(Error::Shape(format!(
                "expected an (N, H, W, C) batch, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn channels(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> Real {
        let (_, w, ch) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[c + ch * j + ch * w * i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, value: Real) {
        let (w, ch) = (self.shape[1], self.shape[2]);
        self.data[c + ch * j + ch * w * i] = value;
    }

    /// Channel vector of pixel `(i, j)`.
    #[inline]
    pub fn pixel(&self, i: usize, j: usize) -> &[Real] {
        let (w, ch) = (self.shape[1], self.shape[2]);
        let start = (i * w + j) * ch;
        &self.data[start..start + ch]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize, j: usize) -> &mut [Real] {
        let (w, ch) = (self.shape[1], self.shape[2]);
        let start = (i * w + j) * ch;
        &mut self.data[start..start + ch]
    }

    /// Pixel coordinates in raster order.
    pub fn raster(&self) -> impl Iterator<Item = (usize, usize)> {
        let (h, w) = (self.shape[0], self.shape[1]);
        (0..h).flat_map(move |i| (0..w).map(move |j| (i, j)))
    }

    fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(Real, Real) -> Real) -> Result<Tensor> {
        self.check_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: Real) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn exp(&self) -> Tensor {
        self.map(Real::exp)
    }

    pub fn ln(&self) -> Tensor {
        self.map(Real::ln)
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn sum_sq(&self) -> Real {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> Real {
        self.sum_sq().sqrt()
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<Real> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-pixel channel contraction `y[p, co] = Σ_ci x[p, ci] · m[ci, co]`,
    /// with `m` stored row-major as `cin × cout`.
    pub fn matmul_channels(&self, m: &[Real], cout: usize) -> Result<Tensor> {
        let (h, w, cin) = self.dims3()?;
        if m.len() != cin * cout {
            return Err(Error::Shape(format!(
                "channel matrix has {} entries, expected {cin}x{cout}",
                m.len()
            )));
        }
        let mut out = Tensor::zeros(&[h, w, cout]);
        for (src, dst) in self.data.chunks_exact(cin).zip(out.data.chunks_exact_mut(cout)) {
            for (ci, &x) in src.iter().enumerate() {
                let row = &m[ci * cout..(ci + 1) * cout];
                for (d, &r) in dst.iter_mut().zip(row) {
                    *d += x * r;
                }
            }
        }
        Ok(out)
    }

    /// Channel range `[from, to)` of an image.
    pub fn channel_slice(&self, from: usize, to: usize) -> Result<Tensor> {
        let (h, w, c) = self.dims3()?;
        if from > to || to > c {
            return Err(Error::Shape(format!(
                "channel range {from}..{to} out of 0..{c}"
            )));
        }
        let width = to - from;
        let mut data = Vec::with_capacity(h * w * width);
        for px in self.data.chunks_exact(c) {
            data.extend_from_slice(&px[from..to]);
        }
        Ok(Tensor {
            shape: vec![h, w, width],
            data,
        })
    }

    /// Splits an image along channels into `[0, at)` and `[at, C)`.
    pub fn split_channels(&self, at: usize) -> Result<(Tensor, Tensor)> {
        let c = self.dims3()?.2;
        Ok((self.channel_slice(0, at)?, self.channel_slice(at, c)?))
    }

    /// Splits an image into `parts` equal channel blocks.
    pub fn chunk_channels(&self, parts: usize) -> Result<Vec<Tensor>> {
        let c = self.dims3()?.2;
        if parts == 0 || c % parts != 0 {
            return Err(Error::Shape(format!(
                "{c} channels do not split into {parts} equal blocks"
            )));
        }
        let width = c / parts;
        (0..parts)
            .map(|p| self.channel_slice(p * width, (p + 1) * width))
            .collect()
    }

    /// Concatenates images along channels.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let (h, w, _) = first.dims3()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (ph, pw, pc) = p.dims3()?;
            if (ph, pw) != (h, w) {
                return Err(Error::Shape(format!(
                    "concat: spatial {}x{} vs {ph}x{pw}",
                    h, w
                )));
            }
            widths.push(pc);
        }
        let c: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(h * w * c);
        for px in 0..h * w {
            for (p, &pc) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[px * pc..(px + 1) * pc]);
            }
        }
        Ok(Tensor {
            shape: vec![h, w, c],
            data,
        })
    }

    /// Stacks equally shaped images into an `(N, H, W, C)` batch.
    pub fn stack(images: &[Tensor]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("stack of zero images".into()))?;
        let (h, w, c) = first.dims3()?;
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            if img.shape != first.shape {
                return Err(Error::Shape(format!(
                    "stack: {:?} vs {:?}",
                    first.shape, img.shape
                )));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor {
            shape: vec![images.len(), h, w, c],
            data,
        })
    }

    /// Image `n` of an `(N, H, W, C)` batch.
    pub fn image(&self, n: usize) -> Result<Tensor> {
        let (count, h, w, c) = self.dims4()?;
        if n >= count {
            return Err(Error::Shape(format!("image {n} of a batch of {count}")));
        }
        let size = h * w * c;
        Ok(Tensor {
            shape: vec![h, w, c],
            data: self.data[n * size..(n + 1) * size].to_vec(),
        })
    }

    pub fn unstack(&self) -> Result<Vec<Tensor>> {
        let n = self.dims4()?.0;
        (0..n).map(|k| self.image(k)).collect()
    }
}
