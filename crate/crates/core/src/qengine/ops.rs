//! Non-convolutional layer kernels with their backward passes.

use crate::netir::{Padding, PoolMode, TensorShape};
use crate::Scalar;

use super::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug)]
pub struct PoolGeometry {
    pub input: TensorShape,
    pub mode: PoolMode,
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl PoolGeometry {
    pub fn new(input: TensorShape, mode: PoolMode, window: (usize, usize), stride: (usize, usize), padding: Padding) -> Self {
        let (kh, kw) = window;
        let (sh, sw) = stride;
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Valid => ((input.height - kh) / sh + 1, (input.width - kw) / sw + 1, 0, 0),
            Padding::Same => {
                let oh = input.height.div_ceil(sh);
                let ow = input.width.div_ceil(sw);
                let ph = ((oh - 1) * sh + kh).saturating_sub(input.height);
                let pw = ((ow - 1) * sw + kw).saturating_sub(input.width);
                (oh, ow, ph / 2, pw / 2)
            }
        };
        Self { input, mode, window, stride, out_h, out_w, pad_top, pad_left }
    }

    fn taps(&self, oy: usize, ox: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (kh, kw) = self.window;
        (0..kh).flat_map(move |ky| (0..kw).map(move |kx| (ky, kx))).filter_map(move |(ky, kx)| {
            let y = (oy * self.stride.0 + ky).checked_sub(self.pad_top)?;
            let x = (ox * self.stride.1 + kx).checked_sub(self.pad_left)?;
            (y < self.input.height && x < self.input.width).then_some((y, x))
        })
    }
}

/// For max pooling the cache holds the flat argmax of every output; padding
/// taps never win. Average pooling divides by the number of in-bounds taps.
pub fn pool_forward<T: Scalar>(x: &Tensor<T>, g: &PoolGeometry) -> (Tensor<T>, Vec<usize>) {
    let c = g.input.channels;
    let shape = TensorShape::new(g.out_h, g.out_w, c);
    let mut out = Tensor::zeros(x.batch, shape);
    let mut argmax = Vec::new();
    if g.mode == PoolMode::Max {
        argmax.resize(out.len(), 0);
    }
    for n in 0..x.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o = out.index(n, oy, ox, 0);
                match g.mode {
                    PoolMode::Max => {
                        let mut best = vec![T::neg_infinity(); c];
                        for (y, xx) in g.taps(oy, ox) {
                            let i = x.index(n, y, xx, 0);
                            for ch in 0..c {
                                let v = x.data[i + ch];
                                if v > best[ch] {
                                    best[ch] = v;
                                    argmax[o + ch] = i + ch;
                                }
                            }
                        }
                        out.data[o..o + c].copy_from_slice(&best);
                    }
                    PoolMode::Avg => {
                        let mut count = 0usize;
                        for (y, xx) in g.taps(oy, ox) {
                            let i = x.index(n, y, xx, 0);
                            for ch in 0..c {
                                out.data[o + ch] += x.data[i + ch];
                            }
                            count += 1;
                        }
                        let inv = T::one() / T::of_usize(count);
                        for v in &mut out.data[o..o + c] {
                            *v *= inv;
                        }
                    }
                }
            }
        }
    }
    (out, argmax)
}

pub fn pool_backward<T: Scalar>(g: &PoolGeometry, batch: usize, grad_out: &Tensor<T>, argmax: &[usize]) -> Tensor<T> {
    let c = g.input.channels;
    let mut d = Tensor::zeros(batch, g.input);
    match g.mode {
        PoolMode::Max => {
            for (&src, &gv) in argmax.iter().zip(&grad_out.data) {
                d.data[src] += gv;
            }
        }
        PoolMode::Avg => {
            for n in 0..batch {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let o = grad_out.index(n, oy, ox, 0);
                        let taps: Vec<_> = g.taps(oy, ox).collect();
                        let inv = T::one() / T::of_usize(taps.len());
                        for (y, xx) in taps {
                            let i = d.index(n, y, xx, 0);
                            for ch in 0..c {
                                d.data[i + ch] += grad_out.data[o + ch] * inv;
                            }
                        }
                    }
                }
            }
        }
    }
    d
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor { batch: x.batch, shape: x.shape, data: x.data.iter().map(|&v| v.max(T::zero())).collect() }
}

/// Uses the forward output as the mask.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor { batch: y.batch, shape: y.shape, data }
}

/// Training-mode batch normalization cache.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-channel statistics over batch and spatial positions.
pub fn bn_forward_train<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> (Tensor<T>, BnCache<T>) {
    let c = x.shape.channels;
    let m = x.len() / c;
    let inv_m = T::one() / T::of_usize(m);
    let mut mean = vec![T::zero(); c];
    for (i, &v) in x.data.iter().enumerate() {
        mean[i % c] += v;
    }
    mean.iter_mut().for_each(|v| *v *= inv_m);
    let mut var = vec![T::zero(); c];
    for (i, &v) in x.data.iter().enumerate() {
        let d = v - mean[i % c];
        var[i % c] += d * d;
    }
    var.iter_mut().for_each(|v| *v *= inv_m);
    let eps = T::of(BN_EPSILON);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let normalized: Vec<T> = x.data.iter().enumerate().map(|(i, &v)| (v - mean[i % c]) * inv_std[i % c]).collect();
    let data = normalized.iter().enumerate().map(|(i, &v)| gamma[i % c] * v + beta[i % c]).collect();
    (Tensor { batch: x.batch, shape: x.shape, data }, BnCache { normalized, inv_std, mean, var })
}

pub fn bn_forward_infer<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T], running_mean: &[T], running_var: &[T]) -> Tensor<T> {
    let c = x.shape.channels;
    let eps = T::of(BN_EPSILON);
    // folded into one affine transform per channel
    let scale: Vec<T> = (0..c).map(|k| gamma[k] / (running_var[k] + eps).sqrt()).collect();
    let shift: Vec<T> = (0..c).map(|k| beta[k] - running_mean[k] * scale[k]).collect();
    let data = x.data.iter().enumerate().map(|(i, &v)| v * scale[i % c] + shift[i % c]).collect();
    Tensor { batch: x.batch, shape: x.shape, data }
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn bn_backward<T: Scalar>(cache: &BnCache<T>, gamma: &[T], grad_out: &Tensor<T>) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let c = grad_out.shape.channels;
    let m = T::of_usize(grad_out.len() / c);
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];
    for (i, (&g, &xh)) in grad_out.data.iter().zip(&cache.normalized).enumerate() {
        d_gamma[i % c] += g * xh;
        d_beta[i % c] += g;
    }
    let data = grad_out
        .data
        .iter()
        .zip(&cache.normalized)
        .enumerate()
        .map(|(i, (&g, &xh))| {
            let k = i % c;
            gamma[k] * cache.inv_std[k] / m * (m * g - d_beta[k] - xh * d_gamma[k])
        })
        .collect();
    (Tensor { batch: grad_out.batch, shape: grad_out.shape, data }, d_gamma, d_beta)
}

/// `y = flatten(x) · W + b` with `W` laid out `[in][units]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &[T], b: &[T], units: usize) -> Tensor<T> {
    let d = x.item_len();
    let mut out = Tensor::zeros(x.batch, TensorShape::new(1, 1, units));
    for n in 0..x.batch {
        let row = &mut out.data[n * units..(n + 1) * units];
        row.copy_from_slice(b);
        for (i, &v) in x.item(n).iter().enumerate() {
            if v == T::zero() {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[i * units..(i + 1) * units]) {
                *o += v * wv;
            }
        }
    }
    debug_assert_eq!(w.len(), d * units);
    out
}

/// Returns `(d_input, d_weights, d_bias)`.
pub fn dense_backward<T: Scalar>(x: &Tensor<T>, w: &[T], grad_out: &Tensor<T>, units: usize) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let d = x.item_len();
    let mut dx = Tensor::zeros(x.batch, x.shape);
    let mut dw = vec![T::zero(); d * units];
    let mut db = vec![T::zero(); units];
    for n in 0..x.batch {
        let g = &grad_out.data[n * units..(n + 1) * units];
        for (b, &gv) in db.iter_mut().zip(g) {
            *b += gv;
        }
        let xin = x.item(n);
        let dxn = &mut dx.data[n * d..(n + 1) * d];
        for i in 0..d {
            let wr = &w[i * units..(i + 1) * units];
            let dwr = &mut dw[i * units..(i + 1) * units];
            let mut s = T::zero();
            for ((dwv, &wv), &gv) in dwr.iter_mut().zip(wr).zip(g) {
                *dwv += xin[i] * gv;
                s += wv * gv;
            }
            dxn[i] = s;
        }
    }
    (dx, dw, db)
}

/// Row-wise, max-shifted.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let k = x.item_len();
    let mut out = x.clone();
    for row in out.data.chunks_mut(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

pub fn channel_pad<T: Scalar>(x: &Tensor<T>, channels: usize) -> Tensor<T> {
    let c = x.shape.channels;
    let shape = TensorShape { channels, ..x.shape };
    let mut out = Tensor::zeros(x.batch, shape);
    for (dst, src) in out.data.chunks_mut(channels).zip(x.data.chunks(c)) {
        dst[..c].copy_from_slice(src);
    }
    out
}

pub fn channel_pad_backward<T: Scalar>(grad_out: &Tensor<T>, input: TensorShape) -> Tensor<T> {
    let c = input.channels;
    let mut d = Tensor::zeros(grad_out.batch, input);
    for (dst, src) in d.data.chunks_mut(c).zip(grad_out.data.chunks(grad_out.shape.channels)) {
        dst.copy_from_slice(&src[..c]);
    }
    d
}

pub fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let total: usize = parts.iter().map(|p| p.shape.channels).sum();
    let first = parts[0];
    let shape = TensorShape { channels: total, ..first.shape };
    let mut out = Tensor::zeros(first.batch, shape);
    let pixels = first.batch * first.shape.height * first.shape.width;
    for px in 0..pixels {
        let mut off = px * total;
        for p in parts {
            let c = p.shape.channels;
            out.data[off..off + c].copy_from_slice(&p.data[px * c..(px + 1) * c]);
            off += c;
        }
    }
    out
}

pub fn concat_backward<T: Scalar>(grad_out: &Tensor<T>, parts: &[TensorShape]) -> Vec<Tensor<T>> {
    let total = grad_out.shape.channels;
    let pixels = grad_out.batch * grad_out.shape.height * grad_out.shape.width;
    let mut out: Vec<Tensor<T>> = parts.iter().map(|&s| Tensor::zeros(grad_out.batch, s)).collect();
    for px in 0..pixels {
        let mut off = px * total;
        for t in out.iter_mut() {
            let c = t.shape.channels;
            t.data[px * c..(px + 1) * c].copy_from_slice(&grad_out.data[off..off + c]);
            off += c;
        }
    }
    out
}
