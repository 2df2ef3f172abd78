//! Reverse-mode derivatives of every step, written out by hand.
//!
//! Each backward function receives the step input `x`, the gradient `gy` of
//! the objective with respect to the step output, and the objective's
//! derivative `glogdet` with respect to the step's log-determinant (or, for a
//! split, its prior log-density). It accumulates parameter gradients into
//! `grads`, laid out like [`Step::params`], and returns the input gradient.

use rayon::prelude::*;

use crate::flow::{unsqueeze, ActNorm, Conv1x1, Coupling, FlowModel, InvConvLayer, Split, Step};
use crate::invconv::linalg::{inverse, transpose};
use crate::invconv::padded::{conv2d_input_grad, conv2d_weight_grad};
use crate::{Error, Real, Result, Tensor};

fn actnorm_backward(a: &ActNorm, x: &Tensor, gy: &Tensor, glogdet: Real, grads: &mut [Real]) -> Result<Tensor> {
    if !a.is_initialized() {
        return Err(Error::Uninitialized);
    }
    let (h, w, c) = x.dims3()?;
    let s = a.scale();
    let (gls, gb) = grads.split_at_mut(c);
    let mut gx = gy.clone();
    for (px, (gpx, xpx)) in gx.data_mut().chunks_exact_mut(c).zip(gy.data().chunks_exact(c).zip(x.data().chunks_exact(c))) {
        for ch in 0..c {
            let y = s[ch] * (xpx[ch] + a.bias()[ch]);
            gls[ch] += gpx[ch] * y;
            gb[ch] += gpx[ch] * s[ch];
            px[ch] = gpx[ch] * s[ch];
        }
    }
    let hw = (h * w) as Real;
    gls.iter_mut().for_each(|g| *g += glogdet * hw);
    Ok(gx)
}

fn invconv_backward(l: &InvConvLayer, x: &Tensor, gy: &Tensor, glogdet: Real, grads: &mut [Real]) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    let kernel = l.kernel();
    let (k, pad) = (kernel.k(), kernel.padding());
    let mut gk = vec![0.0; kernel.weights().len()];
    conv2d_weight_grad(x, gy, k, pad, &mut gk);
    let p = l.parameters();
    let (gfree, gdiag) = grads.split_at_mut(p.free.len());
    p.pullback(&gk, gfree, gdiag);
    let hw = (h * w) as Real;
    gdiag.iter_mut().for_each(|g| *g += glogdet * hw);
    Ok(conv2d_input_grad(gy, kernel.weights(), k, c, (h, w), pad))
}

fn conv1x1_backward(l: &Conv1x1, x: &Tensor, gy: &Tensor, glogdet: Real, grads: &mut [Real]) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    for (xp, gp) in x.data().chunks_exact(c).zip(gy.data().chunks_exact(c)) {
        for ci in 0..c {
            for co in 0..c {
                grads[ci * c + co] += xp[ci] * gp[co];
            }
        }
    }
    // ∂ ln|det W| / ∂W = W⁻ᵀ
    let inv_t = transpose(&inverse(l.weight(), c)?, c);
    let hw = (h * w) as Real;
    for (g, v) in grads.iter_mut().zip(&inv_t) {
        *g += glogdet * hw * v;
    }
    gy.matmul_channels(&transpose(l.weight(), c), c)
}

fn coupling_backward(l: &Coupling, x: &Tensor, gy: &Tensor, glogdet: Real, grads: &mut [Real]) -> Result<Tensor> {
    let (_, _, caches) = l.forward_cached(x)?;
    let nb = l.kind().blocks();
    let b = x.dims3()?.2 / nb;
    let s = l.scale_bound;
    let gys = gy.chunk_channels(nb)?;
    let mut gxs: Vec<Tensor> = Vec::with_capacity(nb);
    gxs.push(gys[0].clone());
    for (i, cache) in caches.iter().enumerate() {
        gxs.push(gys[i + 1].mul(&cache.expg)?);
    }
    let mut off = 0;
    for (i, (cache, net)) in caches.iter().zip(l.nets()).enumerate() {
        let n = net.num_params();
        let gyi = &gys[i + 1];
        let gf = gyi.mul(&cache.expg)?;
        let mut graw = gyi.mul(&cache.y)?;
        for (g, &t) in graw.data_mut().iter_mut().zip(cache.tanh.data()) {
            *g = (*g + glogdet) * s * (1.0 - t * t);
        }
        let gout = Tensor::concat_channels(&[&gf, &graw])?;
        let gprefix = net.backward(&cache.prefix, &cache.net, &gout, &mut grads[off..off + n]);
        off += n;
        for (j, part) in gprefix.chunk_channels(i + 1)?.iter().enumerate() {
            gxs[j].add_assign(part)?;
        }
        debug_assert_eq!(gprefix.dims3()?.2, (i + 1) * b);
    }
    let refs: Vec<&Tensor> = gxs.iter().collect();
    Tensor::concat_channels(&refs)
}

fn split_backward(sp: &Split, x: &Tensor, gkeep: &Tensor, glogp: Real, grads: &mut [Real]) -> Result<Tensor> {
    let (keep, z, _) = sp.forward(x)?;
    let (mu, log_std) = sp.mean_log_std(&keep)?;
    let mut gz = z.clone();
    let mut gmu = mu.clone();
    let mut gls = log_std.clone();
    for (((gzv, gmv), glv), ((&zv, &m), &ls)) in gz
        .data_mut()
        .iter_mut()
        .zip(gmu.data_mut())
        .zip(gls.data_mut())
        .zip(z.data().iter().zip(mu.data()).zip(log_std.data()))
    {
        let inv = (-ls).exp();
        let e = (zv - m) * inv;
        *gzv = -glogp * e * inv;
        *gmv = glogp * e * inv;
        *glv = glogp * (e * e - 1.0);
    }
    let gout = Tensor::concat_channels(&[&gmu, &gls])?;
    let mut gk = sp.prior().backward(&keep, &gout, grads);
    gk.add_assign(gkeep)?;
    Tensor::concat_channels(&[&gk, &gz])
}

/// Backward pass of one model step.
pub fn step_backward(step: &Step, x: &Tensor, gy: &Tensor, glogdet: Real, grads: &mut [Real]) -> Result<Tensor> {
    match step {
        Step::Squeeze => unsqueeze(gy),
        Step::ActNorm(a) => actnorm_backward(a, x, gy, glogdet, grads),
        Step::InvConv(l) => invconv_backward(l, x, gy, glogdet, grads),
        Step::Conv1x1(l) => conv1x1_backward(l, x, gy, glogdet, grads),
        Step::Coupling(l) => coupling_backward(l, x, gy, glogdet, grads),
        Step::Split(s) => split_backward(s, x, gy, glogdet, grads),
    }
}

/// Adds `scale · ∂ ln p(x)/∂θ` into `grads` (laid out like
/// [`FlowModel::param_vector`]) and returns `(ln p(x), scale · ∂ ln p(x)/∂x)`.
pub fn logprob_backward(model: &FlowModel, x: &Tensor, scale: Real, grads: &mut [Real]) -> Result<(Real, Tensor)> {
    if grads.len() != model.num_params() {
        return Err(Error::Shape(format!(
            "gradient buffer of {} for {} parameters",
            grads.len(),
            model.num_params()
        )));
    }
    let trace = model.trace(x)?;
    let mut offsets = Vec::with_capacity(model.steps().len() + 1);
    offsets.push(0);
    for s in model.steps() {
        offsets.push(offsets.last().unwrap() + s.num_params());
    }
    let mut g = trace.output.scale(-scale);
    for (i, step) in model.steps().iter().enumerate().rev() {
        g = step_backward(step, &trace.inputs[i], &g, scale, &mut grads[offsets[i]..offsets[i + 1]])?;
    }
    Ok((trace.logp, g))
}

const GRAD_CHUNK: usize = 8;

/// Mean negative log-likelihood of a batch and its parameter gradient.
///
/// Gradients of consecutive groups of images are computed in parallel and
/// summed in image order, so the result does not depend on the thread count.
pub fn batch_nll_grad(model: &FlowModel, batch: &[Tensor]) -> Result<(Real, Vec<Real>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let n = model.num_params();
    let scale = -1.0 / batch.len() as Real;
    // Fixed-size chunks keep memory bounded and the summation order
    // independent of scheduling.
    let parts: Vec<(Real, Vec<Real>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            let mut nll = 0.0;
            for x in chunk {
                nll -= logprob_backward(model, x, scale, &mut g)?.0;
            }
            Ok((nll, g))
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; n];
    let mut nll = 0.0;
    for (part, g) in &parts {
        nll += part;
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    Ok((nll / batch.len() as Real, total))
}

/// Mean negative log-likelihood without gradients.
pub fn batch_nll(model: &FlowModel, batch: &[Tensor]) -> Result<Real> {
    let lps = model.logprob_batch(batch)?;
    Ok(-lps.iter().sum::<Real>() / batch.len() as Real)
}
