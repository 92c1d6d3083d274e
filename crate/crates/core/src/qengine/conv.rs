//! Square-kernel "same" convolution: float and approximate forward passes and
//! the float backward pass.
//!
//! Kernel layout is `[ky][kx][c_in][c_out]`, so patch element `p` of filter
//! `f` sits at `p * c_out + f`.

use crate::multsim::MultiplierModel;
use crate::netir::TensorShape;
use crate::Scalar;

use super::quant::QuantTensor;
use super::{EngineError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: TensorShape,
    pub kernel: usize,
    pub stride: usize,
    pub filters: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    /// Output `⌈h/s⌉ × ⌈w/s⌉`; total padding `max((out−1)·s + k − h, 0)` with
    /// the smaller half on top/left.
    pub fn same(input: TensorShape, kernel: usize, stride: usize, filters: usize) -> Self {
        let out_h = input.height.div_ceil(stride);
        let out_w = input.width.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + kernel).saturating_sub(input.height);
        let pad_w = ((out_w - 1) * stride + kernel).saturating_sub(input.width);
        Self { input, kernel, stride, filters, out_h, out_w, pad_top: pad_h / 2, pad_left: pad_w / 2 }
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.input.channels
    }

    pub fn weight_len(&self) -> usize {
        self.patch_len() * self.filters
    }

    pub fn output_shape(&self) -> TensorShape {
        TensorShape::new(self.out_h, self.out_w, self.filters)
    }

    /// Source pixel of kernel tap `(ky, kx)` for output `(oy, ox)`, or `None`
    /// inside the zero padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad_top)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad_left)?;
        (y < self.input.height && x < self.input.width).then_some((y, x))
    }

    fn check(&self, input_len: usize, batch: usize, weights: usize, bias: usize) -> Result<(), EngineError> {
        if input_len != batch * self.input.numel() || weights != self.weight_len() || bias != self.filters {
            return Err(EngineError::Shape(format!(
                "convolution geometry {self:?} does not fit input of {input_len}, {weights} weights, {bias} biases"
            )));
        }
        Ok(())
    }

    /// Gathers one input patch into `out` (len `patch_len`), zero-filled in
    /// the padding.
    fn gather<V: Copy>(&self, data: &[V], n: usize, oy: usize, ox: usize, zero: V, out: &mut [V]) {
        let c = self.input.channels;
        let base = n * self.input.numel();
        let mut p = 0;
        for ky in 0..self.kernel {
            for kx in 0..self.kernel {
                match self.source(oy, ox, ky, kx) {
                    Some((y, x)) => {
                        let start = base + (y * self.input.width + x) * c;
                        out[p..p + c].copy_from_slice(&data[start..start + c]);
                    }
                    None => out[p..p + c].fill(zero),
                }
                p += c;
            }
        }
    }
}

/// Floating-point reference convolution.
pub fn conv_forward_float<T: Scalar>(
    input: &Tensor<T>,
    weights: &[T],
    bias: &[T],
    geom: &ConvGeometry,
) -> Result<Tensor<T>, EngineError> {
    geom.check(input.len(), input.batch, weights.len(), bias.len())?;
    let f = geom.filters;
    let mut out = Tensor::zeros(input.batch, geom.output_shape());
    let mut patch = vec![T::zero(); geom.patch_len()];
    let mut o = 0;
    for n in 0..input.batch {
        for oy in 0..geom.out_h {
            for ox in 0..geom.out_w {
                geom.gather(&input.data, n, oy, ox, T::zero(), &mut patch);
                let acc = &mut out.data[o..o + f];
                acc.copy_from_slice(bias);
                for (p, &v) in patch.iter().enumerate() {
                    if v == T::zero() {
                        continue;
                    }
                    let w = &weights[p * f..(p + 1) * f];
                    for (a, &wv) in acc.iter_mut().zip(w) {
                        *a += v * wv;
                    }
                }
                o += f;
            }
        }
    }
    Ok(out)
}

/// Convolution whose every scalar product is read from the multiplier table:
/// `Σ sign_x·sign_w·table(|x|, |w|)` accumulated exactly in `i64`, then
/// scaled by `scale_x · scale_w` and offset by the float bias. Padding taps
/// feed magnitude 0 through the table like any other operand.
pub fn conv_forward_approx<T: Scalar>(
    input: &QuantTensor,
    batch: usize,
    weights: &QuantTensor,
    bias: &[T],
    model: &MultiplierModel,
    geom: &ConvGeometry,
) -> Result<Tensor<T>, EngineError> {
    geom.check(input.len(), batch, weights.len(), bias.len())?;
    let f = geom.filters;
    let w_mag = &weights.magnitudes;
    let w_sign: Vec<i64> = weights.negative.iter().map(|&neg| if neg { -1 } else { 1 }).collect();
    let scale = input.scale * weights.scale;

    let mut out = Tensor::zeros(batch, geom.output_shape());
    let mut patch = vec![0u8; geom.patch_len()];
    let mut patch_neg = vec![false; geom.patch_len()];
    let mut acc = vec![0i64; f];
    let mut o = 0;
    for n in 0..batch {
        for oy in 0..geom.out_h {
            for ox in 0..geom.out_w {
                geom.gather(&input.magnitudes, n, oy, ox, 0, &mut patch);
                geom.gather(&input.negative, n, oy, ox, false, &mut patch_neg);
                acc.fill(0);
                for (p, (&a, &neg)) in patch.iter().zip(&patch_neg).enumerate() {
                    let row = model.row(a);
                    let wm = &w_mag[p * f..(p + 1) * f];
                    let ws = &w_sign[p * f..(p + 1) * f];
                    if neg {
                        for ((s, &m), &sg) in acc.iter_mut().zip(wm).zip(ws) {
                            *s -= sg * row[m as usize] as i64;
                        }
                    } else {
                        for ((s, &m), &sg) in acc.iter_mut().zip(wm).zip(ws) {
                            *s += sg * row[m as usize] as i64;
                        }
                    }
                }
                for (dst, (&s, &b)) in out.data[o..o + f].iter_mut().zip(acc.iter().zip(bias)) {
                    *dst = T::of(s as f64 * scale) + b;
                }
                o += f;
            }
        }
    }
    Ok(out)
}

/// Gradients of one convolution given the operands its forward pass used.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Float backward pass. The approximate forward path is treated as an exact
/// convolution of its dequantized operands (straight-through).
pub fn conv_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &[T],
    grad_out: &Tensor<T>,
    geom: &ConvGeometry,
) -> ConvGrads<T> {
    let f = geom.filters;
    let c = geom.input.channels;
    let mut d_in = Tensor::zeros(input.batch, geom.input);
    let mut d_w = vec![T::zero(); geom.weight_len()];
    let mut d_b = vec![T::zero(); f];
    let mut patch = vec![T::zero(); geom.patch_len()];
    let mut d_patch = vec![T::zero(); geom.patch_len()];
    let mut o = 0;
    for n in 0..input.batch {
        for oy in 0..geom.out_h {
            for ox in 0..geom.out_w {
                let g = &grad_out.data[o..o + f];
                o += f;
                for (db, &gv) in d_b.iter_mut().zip(g) {
                    *db += gv;
                }
                geom.gather(&input.data, n, oy, ox, T::zero(), &mut patch);
                for (p, (&v, dp)) in patch.iter().zip(d_patch.iter_mut()).enumerate() {
                    let w = &weights[p * f..(p + 1) * f];
                    let dw = &mut d_w[p * f..(p + 1) * f];
                    let mut s = T::zero();
                    for ((dwv, &wv), &gv) in dw.iter_mut().zip(w).zip(g) {
                        *dwv += v * gv;
                        s += wv * gv;
                    }
                    *dp = s;
                }
                let base = n * geom.input.numel();
                let mut p = 0;
                for ky in 0..geom.kernel {
                    for kx in 0..geom.kernel {
                        if let Some((y, x)) = geom.source(oy, ox, ky, kx) {
                            let start = base + (y * geom.input.width + x) * c;
                            for (d, &v) in d_in.data[start..start + c].iter_mut().zip(&d_patch[p..p + c]) {
                                *d += v;
                            }
                        }
                        p += c;
                    }
                }
            }
        }
    }
    ConvGrads { input: d_in, weights: d_w, bias: d_b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qengine::quantize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 7-loop convolution with explicit padding arithmetic.
    fn naive(input: &Tensor<f64>, w: &[f64], b: &[f64], g: &ConvGeometry) -> Vec<f64> {
        let mut out = Vec::new();
        let s = g.input;
        for n in 0..input.batch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    for f in 0..g.filters {
                        let mut acc = b[f];
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let y = (oy * g.stride + ky) as isize - g.pad_top as isize;
                                let x = (ox * g.stride + kx) as isize - g.pad_left as isize;
                                if y < 0 || x < 0 || y >= s.height as isize || x >= s.width as isize {
                                    continue;
                                }
                                for c in 0..s.channels {
                                    let iv = input.data[input.index(n, y as usize, x as usize, c)];
                                    acc += iv * w[((ky * g.kernel + kx) * s.channels + c) * g.filters + f];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (Tensor<f64>, Vec<f64>, Vec<f64>, ConvGeometry) {
        let shape = TensorShape::new(rng.gen_range(1..7), rng.gen_range(1..7), rng.gen_range(1..4));
        let kernel = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..3);
        let g = ConvGeometry::same(shape, kernel, stride, rng.gen_range(1..4));
        let batch = rng.gen_range(1..3);
        let x = Tensor::from_vec(batch, shape, (0..batch * shape.numel()).map(|_| rng.gen_range(0.0..2.0)).collect());
        let w = (0..g.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = (0..g.filters).map(|_| rng.gen_range(-0.5..0.5)).collect();
        (x, w, b, g)
    }

    #[test]
    fn same_geometry() {
        let g = ConvGeometry::same(TensorShape::new(32, 32, 3), 3, 1, 16);
        assert_eq!((g.out_h, g.out_w, g.pad_top, g.pad_left), (32, 32, 1, 1));
        let g = ConvGeometry::same(TensorShape::new(7, 8, 1), 3, 2, 1);
        assert_eq!((g.out_h, g.out_w), (4, 4));
        assert_eq!((g.pad_top, g.pad_left), (1, 0));
    }

    #[test]
    fn float_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (x, w, b, g) = random_case(&mut rng);
            let got = conv_forward_float(&x, &w, &b, &g).unwrap();
            for (a, e) in got.data.iter().zip(naive(&x, &w, &b, &g)) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_by_one_hand_arithmetic() {
        let shape = TensorShape::new(1, 1, 1);
        let g = ConvGeometry::same(shape, 1, 1, 1);
        let x = QuantTensor { magnitudes: vec![7], negative: vec![false], scale: 0.1 };
        let w = QuantTensor { magnitudes: vec![5], negative: vec![true], scale: 0.2 };
        let exact = MultiplierModel::build_exact("e", 0.5).unwrap();
        let y = conv_forward_approx::<f64>(&x, 1, &w, &[0.0], &exact, &g).unwrap();
        assert!((y.data[0] + 0.7).abs() < 1e-12);
    }

    #[test]
    fn all_zero_table_gives_bias_only() {
        let zero = MultiplierModel::from_table("zero", vec![0; 65536], 0.01, crate::multsim::TableSource::Custom).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, w, b, g) = random_case(&mut rng);
        let qx = quantize(&x.data, false).unwrap();
        let qw = quantize(&w, false).unwrap();
        let y = conv_forward_approx(&qx, x.batch, &qw, &b, &zero, &g).unwrap();
        for (i, v) in y.data.iter().enumerate() {
            assert_eq!(*v, b[i % g.filters]);
        }
    }

    #[test]
    fn exact_table_equals_float_on_dequantized_operands() {
        let exact = MultiplierModel::build_exact("e", 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (x, w, b, g) = random_case(&mut rng);
            let qx = quantize(&x.data, false).unwrap();
            let qw = quantize(&w, false).unwrap();
            let approx = conv_forward_approx(&qx, x.batch, &qw, &b, &exact, &g).unwrap();
            let xd = Tensor::from_vec(x.batch, x.shape, qx.dequantize());
            let float = conv_forward_float(&xd, &qw.dequantize(), &b, &g).unwrap();
            for (a, f) in approx.data.iter().zip(&float.data) {
                assert!((a - f).abs() < 1e-9, "{a} vs {f}");
            }
        }
    }

    #[test]
    fn geometry_mismatch_is_an_error() {
        let g = ConvGeometry::same(TensorShape::new(4, 4, 2), 3, 1, 2);
        let x = Tensor::<f32>::zeros(1, TensorShape::new(4, 4, 3));
        assert!(matches!(conv_forward_float(&x, &[0.0; 36], &[0.0; 2], &g), Err(EngineError::Shape(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (x, w, b, g) = random_case(&mut rng);
            let y = conv_forward_float(&x, &w, &b, &g).unwrap();
            let gy: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gy = Tensor::from_vec(y.batch, y.shape, gy);
            let grads = conv_backward(&x, &w, &gy, &g);
            let loss = |x: &Tensor<f64>, w: &[f64], b: &[f64]| -> f64 {
                conv_forward_float(x, w, b, &g).unwrap().data.iter().zip(&gy.data).map(|(a, b)| a * b).sum()
            };
            let h = 1e-6;
            // linear in every operand: central differences are exact up to rounding
            for i in 0..w.len() {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[i] += h;
                wm[i] -= h;
                let fd = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * h);
                assert!((fd - grads.weights[i]).abs() < 1e-6);
            }
            for i in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp.data[i] += h;
                xm.data[i] -= h;
                let fd = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * h);
                assert!((fd - grads.input.data[i]).abs() < 1e-6);
            }
            for f in 0..b.len() {
                let expect: f64 = gy.data.iter().skip(f).step_by(g.filters).sum();
                assert!((expect - grads.bias[f]).abs() < 1e-9);
            }
        }
    }
}
