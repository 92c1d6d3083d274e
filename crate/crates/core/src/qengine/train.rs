//! Adam training with L2 regularization and augmentation, and evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netir::{LayerGraph, LayerKey, TensorShape};
use crate::Scalar;

use super::net::{backward, forward, forward_pass, Gradients, Phase, Trace};
use super::ops::BN_MOMENTUM;
use super::{ConvArithmetic, EngineError, Tensor, WeightStore};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Borrowed view of labelled 8-bit images (NHWC).
#[derive(Clone, Copy, Debug)]
pub struct Samples<'a> {
    pub images: &'a [u8],
    pub shape: TensorShape,
    pub labels: &'a [u8],
    pub num_classes: usize,
}

impl<'a> Samples<'a> {
    pub fn new(images: &'a [u8], shape: TensorShape, labels: &'a [u8], num_classes: usize) -> Result<Self, EngineError> {
        if images.len() != labels.len() * shape.numel() {
            return Err(EngineError::Shape(format!(
                "{} image bytes for {} labels of shape {shape}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(EngineError::Shape(format!("label {l} out of range for {num_classes} classes")));
        }
        Ok(Self { images, shape, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &'a [u8] {
        let n = self.shape.numel();
        &self.images[i * n..(i + 1) * n]
    }

    /// Bytes scaled to `[0, 1]`.
    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> Tensor<T> {
        let inv = T::one() / T::of(255.0);
        let data = idx.iter().flat_map(|&i| self.image(i).iter().map(move |&b| T::of(b as f64) * inv)).collect();
        Tensor::from_vec(idx.len(), self.shape, data)
    }

    /// As [`batch`](Self::batch), with a random horizontal flip and a random
    /// shift of up to `shift` pixels per axis (zero fill) per image.
    pub fn augmented_batch<T: Scalar, R: Rng + ?Sized>(&self, idx: &[usize], flip: bool, shift: usize, rng: &mut R) -> Tensor<T> {
        let TensorShape { height: h, width: w, channels: c } = self.shape;
        let inv = T::one() / T::of(255.0);
        let mut out = Tensor::zeros(idx.len(), self.shape);
        let s = shift as isize;
        for (n, &i) in idx.iter().enumerate() {
            let flipped = flip && rng.gen_bool(0.5);
            let (dy, dx) = if s > 0 { (rng.gen_range(-s..=s), rng.gen_range(-s..=s)) } else { (0, 0) };
            let src = self.image(i);
            for y in 0..h {
                let sy = y as isize - dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let mut sx = x as isize - dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    if flipped {
                        sx = w as isize - 1 - sx;
                    }
                    let from = (sy as usize * w + sx as usize) * c;
                    let to = out.index(n, y, x, 0);
                    for k in 0..c {
                        out.data[to + k] = T::of(src[from + k] as f64) * inv;
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub flip: bool,
    /// Maximum random shift in pixels; 0 disables shifting.
    pub shift: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 32, learning_rate: 0.001, l2: 1e-4, flip: true, shift: 4 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.epochs == 0 {
            return Err(EngineError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(EngineError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(EngineError::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(EngineError::Config(format!("l2 coefficient {} must be finite and non-negative", self.l2)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean mini-batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub step_loss: Vec<f64>,
}

/// Mean cross-entropy of `probs` against `labels` and its gradient with
/// respect to the softmax input, `(p − onehot) / N`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[u8]) -> (f64, Tensor<T>) {
    let k = probs.item_len();
    let n = probs.batch;
    let inv = T::one() / T::of_usize(n);
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let p = probs.data[i * k + l as usize].as_f64();
        loss -= p.max(f64::MIN_POSITIVE).ln();
        grad.data[i * k + l as usize] -= T::one();
    }
    grad.data.iter_mut().for_each(|v| *v *= inv);
    (loss / n as f64, grad)
}

/// Regularized loss `CE + λ/2·Σ‖kernel‖²` and its gradients on one batch.
pub fn loss_and_gradients<T: Scalar>(
    g: &LayerGraph,
    w: &WeightStore<T>,
    x: &Tensor<T>,
    labels: &[u8],
    l2: f64,
    arith: ConvArithmetic<'_>,
) -> Result<(f64, Gradients<T>, Trace<T>), EngineError> {
    let trace = forward_pass(g, w, x, arith, Phase::Train)?;
    let (ce, grad_logits) = cross_entropy(trace.probabilities(), labels);
    let mut grads = backward(g, w, &trace, grad_logits)?;
    let mut loss = ce;
    if l2 > 0.0 {
        loss += 0.5 * l2 * w.kernel_sq_norm().as_f64();
        let lam = T::of(l2);
        for (key, gl) in grads.layers.iter_mut() {
            let p = w.get(key).expect("gradient for a stored layer");
            if p.tensors[0].name == "kernel" {
                for (gv, &wv) in gl[0].iter_mut().zip(&p.tensors[0].data) {
                    *gv += lam * wv;
                }
            }
        }
    }
    Ok((loss, grads, trace))
}

/// Adam optimizer state bound to one graph.
pub struct Trainer<'a, T> {
    graph: &'a LayerGraph,
    arith: ConvArithmetic<'a>,
    cfg: TrainConfig,
    moments: BTreeMap<LayerKey, Vec<(Vec<T>, Vec<T>)>>,
    t: i32,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(graph: &'a LayerGraph, arith: ConvArithmetic<'a>, cfg: TrainConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        Ok(Self { graph, arith, cfg, moments: BTreeMap::new(), t: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One Adam step; returns the batch loss before the update.
    pub fn step(&mut self, w: &mut WeightStore<T>, x: &Tensor<T>, labels: &[u8]) -> Result<f64, EngineError> {
        let (loss, grads, trace) = loss_and_gradients(self.graph, w, x, labels, self.cfg.l2, self.arith)?;
        if !loss.is_finite() {
            return Err(EngineError::Numeric(format!("loss {loss}")));
        }
        self.t += 1;
        let lr = T::of(self.cfg.learning_rate);
        let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
        let c1 = T::one() - T::of(ADAM_BETA1.powi(self.t));
        let c2 = T::one() - T::of(ADAM_BETA2.powi(self.t));
        let eps = T::of(ADAM_EPS);
        for (key, gl) in &grads.layers {
            let p = w.get_mut(key).expect("gradient for a stored layer");
            let m = self
                .moments
                .entry(*key)
                .or_insert_with(|| gl.iter().map(|g| (vec![T::zero(); g.len()], vec![T::zero(); g.len()])).collect());
            for ((tensor, g), (mt, vt)) in p.tensors.iter_mut().zip(gl).zip(m.iter_mut()) {
                for (((wv, &gv), mv), vv) in tensor.data.iter_mut().zip(g).zip(mt.iter_mut()).zip(vt.iter_mut()) {
                    *mv = b1 * *mv + (T::one() - b1) * gv;
                    *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                    let mh = *mv / c1;
                    let vh = *vv / c2;
                    *wv -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        let mom = T::of(BN_MOMENTUM);
        for (key, mean, var) in trace.bn_stats(self.graph) {
            let p = w.get_mut(&key).expect("batch norm layer is stored");
            for (r, &v) in p.tensors[2].data.iter_mut().zip(mean) {
                *r = mom * *r + (T::one() - mom) * v;
            }
            for (r, &v) in p.tensors[3].data.iter_mut().zip(var) {
                *r = mom * *r + (T::one() - mom) * v;
            }
        }
        Ok(loss)
    }

    /// Full training run: shuffled mini-batches every epoch, last batch
    /// possibly short. A non-finite loss is reported as divergence.
    pub fn fit<R: Rng + ?Sized>(&mut self, w: &mut WeightStore<T>, data: &Samples<'_>, rng: &mut R) -> Result<TrainHistory, EngineError> {
        if data.is_empty() {
            return Err(EngineError::Config("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut hist = TrainHistory::default();
        for epoch in 0..self.cfg.epochs {
            order.shuffle(rng);
            let mut sum = 0.0;
            let mut steps = 0;
            for (step, idx) in order.chunks(self.cfg.batch_size).enumerate() {
                let x = if self.cfg.flip || self.cfg.shift > 0 {
                    data.augmented_batch(idx, self.cfg.flip, self.cfg.shift, rng)
                } else {
                    data.batch(idx)
                };
                let labels: Vec<u8> = idx.iter().map(|&i| data.labels[i]).collect();
                let loss = match self.step(w, &x, &labels) {
                    Ok(l) => l,
                    Err(EngineError::Numeric(_)) => return Err(EngineError::Diverged { epoch, step, loss: f64::NAN }),
                    Err(e) => return Err(e),
                };
                hist.step_loss.push(loss);
                sum += loss;
                steps += 1;
            }
            hist.epoch_loss.push(sum / steps as f64);
        }
        Ok(hist)
    }
}

/// Trains `w` in place on `data`. Layers missing from `w`, or flagged for
/// re-initialization, are initialized from `rng` first.
pub fn train<T: Scalar, R: Rng + ?Sized>(
    g: &LayerGraph,
    w: &mut WeightStore<T>,
    data: &Samples<'_>,
    cfg: &TrainConfig,
    arith: ConvArithmetic<'_>,
    rng: &mut R,
) -> Result<TrainHistory, EngineError> {
    w.ensure(g, rng);
    let mut t = Trainer::new(g, arith, cfg.clone())?;
    t.fit(w, data, rng)
}

/// Top-1 predictions, lowest class index on ties.
pub fn predict<T: Scalar>(
    g: &LayerGraph,
    w: &WeightStore<T>,
    data: &Samples<'_>,
    arith: ConvArithmetic<'_>,
    batch_size: usize,
) -> Result<Vec<usize>, EngineError> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let p = forward(g, w, &data.batch(chunk), arith)?;
        for row in p.data.chunks(p.item_len()) {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Fraction of correctly classified samples.
pub fn evaluate_accuracy<T: Scalar>(
    g: &LayerGraph,
    w: &WeightStore<T>,
    data: &Samples<'_>,
    arith: ConvArithmetic<'_>,
    batch_size: usize,
) -> Result<f64, EngineError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let pred = predict(g, w, data, arith, batch_size)?;
    let correct = pred.iter().zip(data.labels).filter(|(&p, &l)| p == l as usize).count();
    Ok(correct as f64 / data.len() as f64)
}
