//! Forward and backward kernels for the decoder operation set.
//!
//! Every function here is pure: backward kernels take whatever the forward
//! pass saved and return fresh gradient buffers. [`Tape`](super::Tape) wires
//! them together.

use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Batch-norm variance regularizer.
pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let hw = h * w;
    let mut cols = Vec::with_capacity(c * k * k * hw);
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let dx = kx as isize - pad as isize;
                let (lo, hi) = (dx.max(0) as usize, (w as isize + dx.min(0)) as usize);
                let x0 = (-dx).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        cols.resize(cols.len() + w, T::zero());
                        continue;
                    }
                    // row[x] = src[x + dx] for x + dx in [0, w)
                    let src = &plane[sy as usize * w..][..w];
                    cols.resize(cols.len() + x0, T::zero());
                    cols.extend_from_slice(&src[lo..hi]);
                    cols.resize(cols.len() + (w - x0 - (hi - lo)), T::zero());
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let hw = h * w;
    let mut out = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ch * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let dx = kx as isize - pad as isize;
                    let (lo, hi) = (dx.max(0) as usize, (w as isize + dx.min(0)) as usize);
                    let x0 = (-dx).max(0) as usize;
                    for (d, &s) in dst[lo..hi].iter_mut().zip(&src[x0..x0 + (hi - lo)]) {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

fn conv_dims<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = input.chw()?;
    let (o, wc, k) = match *weight.shape() {
        [o, wc, k1, k2] if k1 == k2 => (o, wc, k1),
        _ => {
            return Err(Error::shape(format!(
                "conv weight must be O x C x k x k, got {:?}",
                weight.shape()
            )))
        }
    };
    if k % 2 == 0 {
        return Err(Error::shape(format!("conv kernel size {k} must be odd")));
    }
    if wc != c {
        return Err(Error::shape(format!(
            "conv input has {c} channels but weight expects {wc}"
        )));
    }
    if bias.shape() != [o] {
        return Err(Error::shape(format!(
            "conv bias {:?} does not match {o} output channels",
            bias.shape()
        )));
    }
    Ok((c, h, w, o, k))
}

/// Same-size 2-D convolution (zero padding `k / 2`), cross-correlation
/// convention as in every deep-learning framework.
pub fn conv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w, o, k) = conv_dims(input, weight, bias)?;
    let hw = h * w;
    let mut out = vec![T::zero(); o * hw];
    for (row, &b) in out.chunks_exact_mut(hw).zip(bias.data()) {
        row.iter_mut().for_each(|v| *v = b);
    }
    let ckk = c * k * k;
    if k == 1 {
        T::gemm(o, ckk, hw, weight.data(), false, input.data(), false, T::one(), &mut out);
    } else {
        let cols = im2col(input.data(), c, h, w, k);
        T::gemm(o, ckk, hw, weight.data(), false, &cols, false, T::one(), &mut out);
    }
    Tensor::new(&[o, h, w], out)
}

pub struct Conv2dGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &[T],
    need_input: bool,
) -> Result<Conv2dGrads<T>> {
    let (c, h, w, o, k) = conv_dims(input, weight, bias)?;
    let hw = h * w;
    let ckk = c * k * k;
    if grad_out.len() != o * hw {
        return Err(Error::shape("conv2d_backward: output gradient size"));
    }
    let bias_grad: Vec<T> = grad_out.chunks_exact(hw).map(|r| r.iter().copied().sum()).collect();
    let mut weight_grad = vec![T::zero(); o * ckk];
    let cols_owned;
    let cols: &[T] = if k == 1 {
        input.data()
    } else {
        cols_owned = im2col(input.data(), c, h, w, k);
        &cols_owned
    };
    // dW = dY * cols^T
    T::gemm(o, hw, ckk, grad_out, false, cols, true, T::zero(), &mut weight_grad);
    let input_grad = if need_input {
        let mut dcols = vec![T::zero(); ckk * hw];
        // dcols = W^T * dY
        T::gemm(ckk, o, hw, weight.data(), true, grad_out, false, T::zero(), &mut dcols);
        Some(if k == 1 { dcols } else { col2im(&dcols, c, h, w, k) })
    } else {
        None
    };
    Ok(Conv2dGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_grad,
    })
}

/// Two-tap interpolation weights along one axis.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    w_lo: T,
    w_hi: T,
}

fn axis_taps<T: Real>(src: usize, dst: usize, mode: Interpolation) -> Vec<Tap<T>> {
    (0..dst)
        .map(|i| match mode {
            Interpolation::Nearest => {
                let s = i * src / dst;
                Tap { lo: s, hi: s, w_lo: T::one(), w_hi: T::zero() }
            }
            Interpolation::Bilinear => {
                let scale = src as f64 / dst as f64;
                let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (pos.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                let frac = pos - lo as f64;
                Tap { lo, hi, w_lo: T::of(1.0 - frac), w_hi: T::of(frac) }
            }
        })
        .collect()
}

fn check_upsample(h: usize, w: usize, target: (usize, usize)) -> Result<()> {
    if target.0 < h || target.1 < w {
        return Err(Error::invalid(format!(
            "upsample cannot shrink {h}x{w} to {}x{}",
            target.0, target.1
        )));
    }
    Ok(())
}

/// Nearest or bilinear (align-corners-false) upsampling of every channel.
pub fn upsample<T: Real>(input: &Tensor<T>, target: (usize, usize), mode: Interpolation) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw()?;
    check_upsample(h, w, target)?;
    let (th, tw) = target;
    let rows = axis_taps::<T>(h, th, mode);
    let cols = axis_taps::<T>(w, tw, mode);
    let mut out = Vec::with_capacity(c * th * tw);
    if mode == Interpolation::Nearest {
        for plane in input.data().chunks_exact(h * w) {
            for r in &rows {
                let src = &plane[r.lo * w..][..w];
                out.extend(cols.iter().map(|t| src[t.lo]));
            }
        }
        return Tensor::new(&[c, th, tw], out);
    }
    for plane in input.data().chunks_exact(h * w) {
        for r in &rows {
            let lo = &plane[r.lo * w..][..w];
            let hi = &plane[r.hi * w..][..w];
            for t in &cols {
                let top = lo[t.lo] * t.w_lo + lo[t.hi] * t.w_hi;
                let bot = hi[t.lo] * t.w_lo + hi[t.hi] * t.w_hi;
                out.push(top * r.w_lo + bot * r.w_hi);
            }
        }
    }
    Tensor::new(&[c, th, tw], out)
}

/// Adjoint of [`upsample`]: scatters `grad_out` back onto the source grid.
pub fn upsample_backward<T: Real>(
    grad_out: &[T],
    input_shape: (usize, usize, usize),
    target: (usize, usize),
    mode: Interpolation,
) -> Result<Vec<T>> {
    let (c, h, w) = input_shape;
    check_upsample(h, w, target)?;
    let (th, tw) = target;
    if grad_out.len() != c * th * tw {
        return Err(Error::shape("upsample_backward: output gradient size"));
    }
    let rows = axis_taps::<T>(h, th, mode);
    let cols = axis_taps::<T>(w, tw, mode);
    let mut grad = vec![T::zero(); c * h * w];
    if mode == Interpolation::Nearest {
        for (plane, gplane) in grad.chunks_exact_mut(h * w).zip(grad_out.chunks_exact(th * tw)) {
            for (r, grow) in rows.iter().zip(gplane.chunks_exact(tw)) {
                let dst = &mut plane[r.lo * w..][..w];
                for (t, &g) in cols.iter().zip(grow) {
                    dst[t.lo] += g;
                }
            }
        }
        return Ok(grad);
    }
    for (plane, gplane) in grad.chunks_exact_mut(h * w).zip(grad_out.chunks_exact(th * tw)) {
        for (r, grow) in rows.iter().zip(gplane.chunks_exact(tw)) {
            for (t, &g) in cols.iter().zip(grow) {
                let top = g * r.w_lo;
                let bot = g * r.w_hi;
                plane[r.lo * w + t.lo] += top * t.w_lo;
                plane[r.lo * w + t.hi] += top * t.w_hi;
                plane[r.hi * w + t.lo] += bot * t.w_lo;
                plane[r.hi * w + t.hi] += bot * t.w_hi;
            }
        }
    }
    Ok(grad)
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Tensor::new(input.shape(), data).expect("same shape")
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &[T]) -> Vec<T> {
    input
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

/// Saved statistics of a batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel normalization over the spatial positions of a single sample.
/// There are no running statistics: every call normalizes with its own.
pub fn batchnorm_channels<T: Real>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (c, h, w) = input.chw()?;
    let hw = h * w;
    if hw < 2 {
        return Err(Error::invalid("batch norm needs at least two spatial positions per channel"));
    }
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::shape(format!(
            "batch norm affine parameters must have {c} entries"
        )));
    }
    let n = T::of(hw as f64);
    let mut normalized = Vec::with_capacity(c * hw);
    let mut inv_std = Vec::with_capacity(c);
    let mut out = Vec::with_capacity(c * hw);
    for ((plane, &g), &b) in input.data().chunks_exact(hw).zip(scale.data()).zip(shift.data()) {
        let mean = plane.iter().copied().sum::<T>() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + T::of(eps)).sqrt();
        inv_std.push(is);
        for &v in plane {
            let xh = (v - mean) * is;
            normalized.push(xh);
            out.push(xh * g + b);
        }
    }
    Ok((Tensor::new(&[c, h, w], out)?, BatchNormCache { normalized, inv_std }))
}

pub struct BatchNormGrads<T> {
    pub input: Vec<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    scale: &Tensor<T>,
    grad_out: &[T],
) -> BatchNormGrads<T> {
    let c = cache.inv_std.len();
    let hw = cache.normalized.len() / c;
    let n = T::of(hw as f64);
    let mut input = Vec::with_capacity(c * hw);
    let mut dscale = Vec::with_capacity(c);
    let mut dshift = Vec::with_capacity(c);
    for ch in 0..c {
        let xh = &cache.normalized[ch * hw..][..hw];
        let g = &grad_out[ch * hw..][..hw];
        let sum_g: T = g.iter().copied().sum();
        let sum_gx: T = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        dscale.push(sum_gx);
        dshift.push(sum_g);
        let k = scale.data()[ch] * cache.inv_std[ch] / n;
        for (&gi, &xi) in g.iter().zip(xh) {
            input.push(k * (n * gi - sum_g - xi * sum_gx));
        }
    }
    BatchNormGrads { input, scale: dscale, shift: dshift }
}

/// Half the sum of squared differences.
pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("mse of {:?} and {:?}", a.shape(), b.shape())));
    }
    let half = T::of(0.5);
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() * half)
}

/// Gradient of [`mse`] with respect to `a`.
pub fn mse_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect()
}
