//! Executes a compiled layer graph forward and backward.

use std::collections::BTreeMap;

use crate::netir::{LayerGraph, LayerKey, Op};
use crate::Scalar;

use super::conv::{conv_backward, conv_forward_approx, conv_forward_float, ConvGeometry};
use super::ops::{self, BnCache, PoolGeometry};
use super::{quantize, ConvArithmetic, EngineError, LayerParams, Tensor, WeightStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Batch statistics for batch norm; caches kept for the backward pass.
    Train,
    /// Running statistics for batch norm.
    Infer,
}

enum Saved<T> {
    None,
    /// Operands the forward pass actually multiplied; `None` means the
    /// unmodified float tensors.
    Conv { geom: ConvGeometry, input: Option<Tensor<T>>, weights: Option<Vec<T>> },
    Pool { geom: PoolGeometry, argmax: Vec<usize> },
    Bn(BnCache<T>),
}

/// Every layer output of one forward pass plus what backward needs.
pub struct Trace<T> {
    pub outputs: Vec<Tensor<T>>,
    saved: Vec<Saved<T>>,
    output: usize,
}

impl<T: Scalar> Trace<T> {
    pub fn probabilities(&self) -> &Tensor<T> {
        &self.outputs[self.output]
    }

    /// Dequantized convolution operands cached by an approximate train-phase
    /// pass for layer `i`.
    pub fn conv_snapshot(&self, i: usize) -> Option<(&Tensor<T>, &[T])> {
        match &self.saved[i] {
            Saved::Conv { input: Some(x), weights: Some(w), .. } => Some((x, w.as_slice())),
            _ => None,
        }
    }

    /// Batch mean and variance of every batch-norm layer (train phase only).
    pub fn bn_stats<'a>(&'a self, g: &'a LayerGraph) -> impl Iterator<Item = (LayerKey, &'a [T], &'a [T])> + 'a {
        self.saved.iter().zip(&g.layers).filter_map(|(s, l)| match (s, l.key) {
            (Saved::Bn(c), Some(k)) => Some((k, c.mean.as_slice(), c.var.as_slice())),
            _ => None,
        })
    }
}

fn params<T: Scalar>(w: &WeightStore<T>, key: Option<LayerKey>) -> Result<&LayerParams<T>, EngineError> {
    let key = key.ok_or_else(|| EngineError::Shape("parametrized layer without a key".into()))?;
    w.get(&key).ok_or_else(|| EngineError::Shape(format!("no weights for {}#{}", key.node, key.slot)))
}

/// Runs the graph on `x` (NHWC, batch first). Activations are quantized
/// per image so a result never depends on what else shares the batch.
pub fn forward_pass<T: Scalar>(
    g: &LayerGraph,
    w: &WeightStore<T>,
    x: &Tensor<T>,
    arith: ConvArithmetic<'_>,
    phase: Phase,
) -> Result<Trace<T>, EngineError> {
    if x.shape != g.input_shape() {
        return Err(EngineError::Shape(format!("input {} but graph expects {}", x.shape, g.input_shape())));
    }
    let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(g.layers.len());
    let mut saved = Vec::with_capacity(g.layers.len());
    for layer in &g.layers {
        let arg = |k: usize| &outputs[layer.inputs[k]];
        let (out, s) = match layer.op {
            Op::Input => (x.clone(), Saved::None),
            Op::Conv { kernel, stride, filters } => {
                let p = params(w, layer.key)?;
                let geom = ConvGeometry::same(layer.input_shapes[0], kernel, stride, filters);
                let (wk, bias) = (&p.tensors[0].data, &p.tensors[1].data);
                let input = arg(0);
                match arith {
                    ConvArithmetic::Float => {
                        (conv_forward_float(input, wk, bias, &geom)?, Saved::Conv { geom, input: None, weights: None })
                    }
                    ConvArithmetic::Approx(model) => {
                        let qw = quantize(wk, false)?;
                        let mut out = Tensor::zeros(input.batch, geom.output_shape());
                        let mut deq = Vec::with_capacity(if phase == Phase::Train { input.len() } else { 0 });
                        let per = out.item_len();
                        for n in 0..input.batch {
                            let qx = quantize(input.item(n), false)?;
                            let y = conv_forward_approx(&qx, 1, &qw, bias, model, &geom)?;
                            out.data[n * per..(n + 1) * per].copy_from_slice(&y.data);
                            if phase == Phase::Train {
                                deq.extend(qx.dequantize::<T>());
                            }
                        }
                        let saved = if phase == Phase::Train {
                            Saved::Conv {
                                geom,
                                input: Some(Tensor::from_vec(input.batch, input.shape, deq)),
                                weights: Some(qw.dequantize()),
                            }
                        } else {
                            Saved::None
                        };
                        (out, saved)
                    }
                }
            }
            Op::BatchNorm => {
                let p = params(w, layer.key)?;
                let (gamma, beta) = (&p.tensors[0].data, &p.tensors[1].data);
                match phase {
                    Phase::Train => {
                        let (y, cache) = ops::bn_forward_train(arg(0), gamma, beta);
                        (y, Saved::Bn(cache))
                    }
                    Phase::Infer => {
                        let y = ops::bn_forward_infer(arg(0), gamma, beta, &p.tensors[2].data, &p.tensors[3].data);
                        (y, Saved::None)
                    }
                }
            }
            Op::Relu => (ops::relu_forward(arg(0)), Saved::None),
            Op::Pool { mode, window, stride, padding } => {
                let geom = PoolGeometry::new(layer.input_shapes[0], mode, window, stride, padding);
                let (y, argmax) = ops::pool_forward(arg(0), &geom);
                (y, Saved::Pool { geom, argmax })
            }
            Op::ChannelPad { channels } => (ops::channel_pad(arg(0), channels), Saved::None),
            Op::Add => {
                let mut y = arg(0).clone();
                y.add_assign(arg(1));
                (y, Saved::None)
            }
            Op::Concat => {
                let parts: Vec<&Tensor<T>> = layer.inputs.iter().map(|&i| &outputs[i]).collect();
                (ops::concat(&parts), Saved::None)
            }
            Op::Dense { units } => {
                let p = params(w, layer.key)?;
                (ops::dense_forward(arg(0), &p.tensors[0].data, &p.tensors[1].data, units), Saved::None)
            }
            Op::Softmax => (ops::softmax(arg(0)), Saved::None),
        };
        if out.data.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::Numeric(format!("non-finite activation after {} at {}", layer.op, layer.node)));
        }
        outputs.push(out);
        saved.push(s);
    }
    Ok(Trace { outputs, saved, output: g.output })
}

/// Class probabilities in inference mode.
pub fn forward<T: Scalar>(
    g: &LayerGraph,
    w: &WeightStore<T>,
    x: &Tensor<T>,
    arith: ConvArithmetic<'_>,
) -> Result<Tensor<T>, EngineError> {
    let mut t = forward_pass(g, w, x, arith, Phase::Infer)?;
    Ok(t.outputs.swap_remove(g.output))
}

/// Gradients of every trainable tensor, in the order of
/// [`LayerParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: BTreeMap<LayerKey, Vec<Vec<T>>>,
    pub input: Tensor<T>,
}

/// Back-propagates `grad_logits`, the loss gradient with respect to the
/// input of the final softmax, through a train-phase trace.
pub fn backward<T: Scalar>(
    g: &LayerGraph,
    w: &WeightStore<T>,
    trace: &Trace<T>,
    grad_logits: Tensor<T>,
) -> Result<Gradients<T>, EngineError> {
    let out_layer = &g.layers[g.output];
    if out_layer.op != Op::Softmax {
        return Err(EngineError::Shape("graph output is not a softmax".into()));
    }
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; g.layers.len()];
    grads[out_layer.inputs[0]] = Some(grad_logits);
    let mut layers = BTreeMap::new();

    fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, d: Tensor<T>) {
        match slot {
            Some(t) => t.add_assign(&d),
            None => *slot = Some(d),
        }
    }

    for i in (1..g.output).rev() {
        let Some(gy) = grads[i].take() else { continue };
        let layer = &g.layers[i];
        let x = |k: usize| &trace.outputs[layer.inputs[k]];
        match (&layer.op, &trace.saved[i]) {
            (Op::Conv { .. }, Saved::Conv { geom, input, weights }) => {
                let p = params(w, layer.key)?;
                let xin = input.as_ref().unwrap_or(x(0));
                let wk = weights.as_ref().unwrap_or(&p.tensors[0].data);
                let cg = conv_backward(xin, wk, &gy, geom);
                layers.insert(layer.key.unwrap(), vec![cg.weights, cg.bias]);
                accumulate(&mut grads[layer.inputs[0]], cg.input);
            }
            (Op::BatchNorm, Saved::Bn(cache)) => {
                let p = params(w, layer.key)?;
                let (dx, dg, db) = ops::bn_backward(cache, &p.tensors[0].data, &gy);
                layers.insert(layer.key.unwrap(), vec![dg, db]);
                accumulate(&mut grads[layer.inputs[0]], dx);
            }
            (Op::Relu, _) => {
                let d = ops::relu_backward(&trace.outputs[i], &gy);
                accumulate(&mut grads[layer.inputs[0]], d);
            }
            (Op::Pool { .. }, Saved::Pool { geom, argmax }) => {
                let d = ops::pool_backward(geom, gy.batch, &gy, argmax);
                accumulate(&mut grads[layer.inputs[0]], d);
            }
            (Op::ChannelPad { .. }, _) => {
                let d = ops::channel_pad_backward(&gy, layer.input_shapes[0]);
                accumulate(&mut grads[layer.inputs[0]], d);
            }
            (Op::Add, _) => {
                accumulate(&mut grads[layer.inputs[1]], gy.clone());
                accumulate(&mut grads[layer.inputs[0]], gy);
            }
            (Op::Concat, _) => {
                for (k, d) in ops::concat_backward(&gy, &layer.input_shapes).into_iter().enumerate() {
                    accumulate(&mut grads[layer.inputs[k]], d);
                }
            }
            (Op::Dense { units }, _) => {
                let p = params(w, layer.key)?;
                let (dx, dw, db) = ops::dense_backward(x(0), &p.tensors[0].data, &gy, *units);
                layers.insert(layer.key.unwrap(), vec![dw, db]);
                accumulate(&mut grads[layer.inputs[0]], dx);
            }
            (op, _) => {
                return Err(EngineError::Shape(format!("layer {i} ({op}) has no train-phase cache for backward")));
            }
        }
    }
    let input = grads[0].take().unwrap_or_else(|| Tensor::zeros(trace.outputs[0].batch, g.input_shape()));
    Ok(Gradients { layers, input })
}
