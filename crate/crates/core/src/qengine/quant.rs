//! Symmetric per-tensor 8-bit sign-magnitude quantization.
//!
//! `scale = max|x| / 255` (1 for an all-zero tensor) and
//! `magnitude = round(|x| / scale)`, so `|x − sign·magnitude·scale| ≤ scale/2`.

use crate::Scalar;

use super::EngineError;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantTensor {
    pub magnitudes: Vec<u8>,
    pub negative: Vec<bool>,
    pub scale: f64,
}

impl QuantTensor {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn value(&self, i: usize) -> f64 {
        let v = self.magnitudes[i] as f64 * self.scale;
        if self.negative[i] {
            -v
        } else {
            v
        }
    }

    pub fn dequantize<T: Scalar>(&self) -> Vec<T> {
        (0..self.len()).map(|i| T::of(self.value(i))).collect()
    }
}

/// With `non_negative`, negative inputs are rejected as a numeric error.
pub fn quantize<T: Scalar>(x: &[T], non_negative: bool) -> Result<QuantTensor, EngineError> {
    let mut max = 0.0f64;
    for (i, v) in x.iter().enumerate() {
        let v = v.as_f64();
        if !v.is_finite() {
            return Err(EngineError::Numeric(format!("non-finite value {v} at element {i}")));
        }
        if non_negative && v < 0.0 {
            return Err(EngineError::Numeric(format!("negative value {v} at element {i} of a non-negative tensor")));
        }
        max = max.max(v.abs());
    }
    let scale = if max == 0.0 { 1.0 } else { max / 255.0 };
    let mut magnitudes = Vec::with_capacity(x.len());
    let mut negative = Vec::with_capacity(x.len());
    for v in x {
        let v = v.as_f64();
        magnitudes.push((v.abs() / scale).round().min(255.0) as u8);
        negative.push(v < 0.0);
    }
    Ok(QuantTensor { magnitudes, negative, scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_tensor() {
        let q = quantize(&[0.0f32; 5], true).unwrap();
        assert_eq!(q.scale, 1.0);
        assert!(q.magnitudes.iter().all(|&m| m == 0));
    }

    #[test]
    fn closed_form_scale() {
        let q = quantize(&[2.55f64, 1.27, -0.5], false).unwrap();
        assert!((q.scale - 0.01).abs() < 1e-15);
        assert_eq!(q.magnitudes, vec![255, 127, 50]);
        assert_eq!(q.negative, vec![false, false, true]);
    }

    #[test]
    fn non_finite_and_sign_errors() {
        assert!(quantize(&[1.0f32, f32::NAN], false).is_err());
        assert!(quantize(&[f64::INFINITY], false).is_err());
        assert!(quantize(&[-1.0f64], true).is_err());
    }

    #[test]
    fn round_trip_within_half_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let n = rng.gen_range(1..64);
            let amp = 10f64.powf(rng.gen_range(-3.0..3.0));
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-amp..amp)).collect();
            let q = quantize(&x, false).unwrap();
            assert!(q.scale > 0.0);
            for (i, &v) in x.iter().enumerate() {
                assert!((q.value(i) - v).abs() <= q.scale / 2.0 * (1.0 + 1e-12), "{v} vs {}", q.value(i));
            }
        }
    }
}
