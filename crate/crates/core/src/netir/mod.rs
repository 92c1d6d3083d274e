//! Lowering of an active CGP subgraph into a flat, shape-checked layer graph.
//!
//! Conventions: convolutions use "same" padding with output size
//! `⌈h / stride⌉`; MAX/AVG nodes pool with "valid" padding and fail to
//! compile when the window does not fit; the SUM node pools its spatially
//! larger operand with an integer-ratio max pooling and zero-pads the
//! channel-poorer one.

mod print;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cgpnet::{ActiveSubgraph, Coord, NodeFunction, NodeKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error("node {node} ({kind}): {reason}")]
    Shape { node: Coord, kind: NodeKind, reason: String },
    #[error("active subgraph is malformed: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl TensorShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub fn numel(&self) -> usize {
        self.height * self.width * self.channels
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.height, self.width, self.channels)
    }
}

/// Output shape of a SUM node: `(min h, min w, max c)`.
pub fn sum_output_shape(a: TensorShape, b: TensorShape) -> TensorShape {
    TensorShape {
        height: a.height.min(b.height),
        width: a.width.min(b.width),
        channels: a.channels.max(b.channels),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    Same,
}

/// Primitive operation of the layer graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Input,
    /// Square kernel, "same" padding, with bias.
    Conv { kernel: usize, stride: usize, filters: usize },
    BatchNorm,
    Relu,
    Pool { mode: PoolMode, window: (usize, usize), stride: (usize, usize), padding: Padding },
    /// Zero-extends the channel dimension.
    ChannelPad { channels: usize },
    Add,
    Concat,
    /// Flattens its input, with bias.
    Dense { units: usize },
    Softmax,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

impl Op {
    pub fn arity(&self) -> Option<usize> {
        match self {
            Op::Input => Some(0),
            Op::Add => Some(2),
            Op::Concat => None,
            _ => Some(1),
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Op::Conv { .. } | Op::Dense { .. } | Op::BatchNorm)
    }

    /// Shape rule; `Err` carries a human-readable reason.
    pub fn infer(&self, inputs: &[TensorShape]) -> Result<TensorShape, String> {
        if let Some(n) = self.arity() {
            if inputs.len() != n {
                return Err(format!("{self:?} takes {n} inputs, got {}", inputs.len()));
            }
        } else if inputs.is_empty() {
            return Err("concatenation of nothing".into());
        }
        let s = inputs.first().copied().unwrap_or(TensorShape::new(1, 1, 1));
        match *self {
            Op::Input => Err("input shape is not inferred".into()),
            Op::Conv { kernel, stride, filters } => {
                if kernel == 0 || stride == 0 || filters == 0 {
                    return Err("convolution parameters must be positive".into());
                }
                Ok(TensorShape::new(ceil_div(s.height, stride), ceil_div(s.width, stride), filters))
            }
            Op::BatchNorm | Op::Relu | Op::Softmax => Ok(s),
            Op::Pool { window: (kh, kw), stride: (sh, sw), padding, .. } => {
                if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
                    return Err("pooling parameters must be positive".into());
                }
                match padding {
                    Padding::Same => Ok(TensorShape::new(ceil_div(s.height, sh), ceil_div(s.width, sw), s.channels)),
                    Padding::Valid => {
                        if s.height < kh || s.width < kw {
                            return Err(format!("{kh}x{kw} pooling window does not fit input {s}"));
                        }
                        Ok(TensorShape::new((s.height - kh) / sh + 1, (s.width - kw) / sw + 1, s.channels))
                    }
                }
            }
            Op::ChannelPad { channels } => {
                if channels < s.channels {
                    return Err(format!("cannot pad {} channels down to {channels}", s.channels));
                }
                Ok(TensorShape { channels, ..s })
            }
            Op::Add => {
                if inputs[0] != inputs[1] {
                    return Err(format!("addition of {} and {}", inputs[0], inputs[1]));
                }
                Ok(s)
            }
            Op::Concat => {
                if inputs.iter().any(|i| i.height != s.height || i.width != s.width) {
                    return Err("concatenated tensors differ spatially".into());
                }
                Ok(TensorShape { channels: inputs.iter().map(|i| i.channels).sum(), ..s })
            }
            Op::Dense { units } => {
                if units == 0 {
                    return Err("dense layer needs at least one unit".into());
                }
                Ok(TensorShape::new(1, 1, units))
            }
        }
    }

    pub fn param_count(&self, input: TensorShape) -> usize {
        match *self {
            Op::Conv { kernel, filters, .. } => kernel * kernel * input.channels * filters + filters,
            Op::Dense { units } => input.numel() * units + units,
            Op::BatchNorm => 2 * input.channels,
            _ => 0,
        }
    }

    /// Multiplications per image; only convolutions count.
    pub fn mult_count(&self, input: TensorShape, output: TensorShape) -> u64 {
        match *self {
            Op::Conv { kernel, .. } => {
                (output.height * output.width * kernel * kernel * input.channels * output.channels) as u64
            }
            _ => 0,
        }
    }
}

/// Identifies a parametrized layer across genotypes: the CGP node it was
/// lowered from plus its position within that node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerKey {
    pub node: Coord,
    pub slot: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub op: Op,
    pub inputs: Vec<usize>,
    pub input_shapes: Vec<TensorShape>,
    pub output_shape: TensorShape,
    pub params: usize,
    pub mults: u64,
    pub node: Coord,
    pub node_kind: NodeKind,
    pub key: Option<LayerKey>,
}

/// Flat DAG of primitive layers in execution order. Layer 0 is the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub layers: Vec<Layer>,
    pub output: usize,
}

impl LayerGraph {
    pub fn input_shape(&self) -> TensorShape {
        self.layers[0].output_shape
    }

    pub fn output_shape(&self) -> TensorShape {
        self.layers[self.output].output_shape
    }

    pub fn param_count(&self) -> usize {
        count_params(self)
    }

    pub fn mult_count(&self) -> u64 {
        count_mults(self)
    }

    /// Re-derives every shape and count from the layer inputs.
    pub fn check(&self) -> Result<(), String> {
        if self.layers.first().map(|l| l.op) != Some(Op::Input) {
            return Err("layer 0 must be the input".into());
        }
        for (i, l) in self.layers.iter().enumerate().skip(1) {
            if l.inputs.iter().any(|&j| j >= i) {
                return Err(format!("layer {i} reads a later layer"));
            }
            let shapes: Vec<_> = l.inputs.iter().map(|&j| self.layers[j].output_shape).collect();
            if shapes != l.input_shapes {
                return Err(format!("layer {i}: recorded input shapes disagree with producers"));
            }
            let out = l.op.infer(&shapes).map_err(|e| format!("layer {i}: {e}"))?;
            if out != l.output_shape {
                return Err(format!("layer {i}: output {} but rule gives {out}", l.output_shape));
            }
            let first = shapes[0];
            if l.params != l.op.param_count(first) || l.mults != l.op.mult_count(first, out) {
                return Err(format!("layer {i}: counts disagree with the op"));
            }
        }
        Ok(())
    }
}

pub fn count_params(g: &LayerGraph) -> usize {
    g.layers.iter().map(|l| l.params).sum()
}

/// Convolution multiplications per image.
pub fn count_mults(g: &LayerGraph) -> u64 {
    g.layers.iter().map(|l| l.mults).sum()
}

struct Builder {
    layers: Vec<Layer>,
    node: Coord,
    kind: NodeKind,
    slot: usize,
}

impl Builder {
    fn new(input: TensorShape) -> Self {
        let input_layer = Layer {
            op: Op::Input,
            inputs: vec![],
            input_shapes: vec![],
            output_shape: input,
            params: 0,
            mults: 0,
            node: Coord::INPUT,
            node_kind: NodeKind::Input,
            key: None,
        };
        Self { layers: vec![input_layer], node: Coord::INPUT, kind: NodeKind::Input, slot: 0 }
    }

    fn enter(&mut self, node: Coord, kind: NodeKind) {
        self.node = node;
        self.kind = kind;
        self.slot = 0;
    }

    fn shape(&self, i: usize) -> TensorShape {
        self.layers[i].output_shape
    }

    fn push(&mut self, op: Op, inputs: &[usize]) -> Result<usize, CompileError> {
        let input_shapes: Vec<_> = inputs.iter().map(|&i| self.shape(i)).collect();
        let output_shape = op
            .infer(&input_shapes)
            .map_err(|reason| CompileError::Shape { node: self.node, kind: self.kind, reason })?;
        let first = input_shapes[0];
        let key = op.has_params().then(|| {
            let k = LayerKey { node: self.node, slot: self.slot };
            self.slot += 1;
            k
        });
        self.layers.push(Layer {
            op,
            inputs: inputs.to_vec(),
            params: op.param_count(first),
            mults: op.mult_count(first, output_shape),
            input_shapes,
            output_shape,
            node: self.node,
            node_kind: self.kind,
            key,
        });
        Ok(self.layers.len() - 1)
    }

    fn conv_relu(&mut self, x: usize, kernel: usize, stride: usize, filters: usize) -> Result<usize, CompileError> {
        let c = self.push(Op::Conv { kernel, stride, filters }, &[x])?;
        self.push(Op::Relu, &[c])
    }

    fn conv_bn(&mut self, x: usize, kernel: usize, stride: usize, filters: usize) -> Result<usize, CompileError> {
        let c = self.push(Op::Conv { kernel, stride, filters }, &[x])?;
        self.push(Op::BatchNorm, &[c])
    }

    fn pool(&mut self, x: usize, mode: PoolMode, kernel: usize, stride: usize) -> Result<usize, CompileError> {
        let op = Op::Pool { mode, window: (kernel, kernel), stride: (stride, stride), padding: Padding::Valid };
        self.push(op, &[x])
    }

    fn sum(&mut self, a: usize, b: usize) -> Result<usize, CompileError> {
        let target = sum_output_shape(self.shape(a), self.shape(b));
        let a = self.unify(a, target)?;
        let b = self.unify(b, target)?;
        self.push(Op::Add, &[a, b])
    }

    /// Brings one SUM operand to `target` by pooling and channel padding.
    fn unify(&mut self, x: usize, target: TensorShape) -> Result<usize, CompileError> {
        let s = self.shape(x);
        let mut x = x;
        if s.height != target.height || s.width != target.width {
            if !s.height.is_multiple_of(target.height) || !s.width.is_multiple_of(target.width) {
                return Err(CompileError::Shape {
                    node: self.node,
                    kind: self.kind,
                    reason: format!("spatial ratio {s} -> {target} is not integral"),
                });
            }
            let r = (s.height / target.height, s.width / target.width);
            x = self.push(Op::Pool { mode: PoolMode::Max, window: r, stride: r, padding: Padding::Valid }, &[x])?;
        }
        if s.channels < target.channels {
            x = self.push(Op::ChannelPad { channels: target.channels }, &[x])?;
        }
        Ok(x)
    }

    fn inception(&mut self, x: usize, p: InceptionParams) -> Result<usize, CompileError> {
        let r1 = self.conv_relu(x, 1, 1, p.r1)?;
        let b1 = self.conv_relu(r1, 5, 1, p.c1)?;
        let r2 = self.conv_relu(x, 1, 1, p.r2)?;
        let b2 = self.conv_relu(r2, 3, 1, p.c2)?;
        let b3 = self.conv_relu(x, 1, 1, p.c3)?;
        let pool = Op::Pool { mode: PoolMode::Max, window: (3, 3), stride: (1, 1), padding: Padding::Same };
        let mp = self.push(pool, &[x])?;
        let b4 = self.conv_relu(mp, 1, 1, p.r3)?;
        self.push(Op::Concat, &[b1, b2, b3, b4])
    }

    fn residual(&mut self, x: usize, p: ResidualParams) -> Result<usize, CompileError> {
        let a = self.conv_bn(x, p.n, p.stride, p.filters)?;
        let a = self.push(Op::Relu, &[a])?;
        let a = self.conv_bn(a, p.m, 1, p.filters)?;
        let skip = self.conv_bn(x, 1, p.stride, p.filters)?;
        let s = self.push(Op::Add, &[a, skip])?;
        self.push(Op::Relu, &[s])
    }

    fn bottleneck(&mut self, x: usize, p: BottleneckParams) -> Result<usize, CompileError> {
        let a = self.conv_bn(x, 1, p.stride, p.reduce)?;
        let a = self.push(Op::Relu, &[a])?;
        let a = self.conv_bn(a, p.n, 1, p.reduce)?;
        let a = self.push(Op::Relu, &[a])?;
        let a = self.conv_bn(a, 1, 1, p.filters)?;
        let skip = self.conv_bn(x, 1, p.stride, p.filters)?;
        let s = self.push(Op::Add, &[a, skip])?;
        self.push(Op::Relu, &[s])
    }

    fn finish(self, output: usize) -> LayerGraph {
        LayerGraph { layers: self.layers, output }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InceptionParams {
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub r1: usize,
    pub r2: usize,
    pub r3: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResidualParams {
    pub n: usize,
    pub m: usize,
    pub stride: usize,
    pub filters: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BottleneckParams {
    pub n: usize,
    pub stride: usize,
    pub filters: usize,
    pub reduce: usize,
}

fn standalone(in_shape: TensorShape, kind: NodeKind, f: impl FnOnce(&mut Builder, usize) -> Result<usize, CompileError>) -> LayerGraph {
    let mut b = Builder::new(in_shape);
    b.enter(Coord::new(1, 0), kind);
    let out = f(&mut b, 0).expect("module lowering preserves valid shapes");
    b.finish(out)
}

/// Four branches (1×1→5×5, 1×1→3×3, 1×1, 3×3 max-pool→1×1) concatenated on
/// channels; every convolution is stride 1, "same", followed by ReLU.
pub fn lower_inception(p: InceptionParams, in_shape: TensorShape) -> LayerGraph {
    standalone(in_shape, NodeKind::Inc, |b, x| b.inception(x, p))
}

/// N×N (stride n) → BN → ReLU → M×M → BN, plus a 1×1 (stride n) → BN skip,
/// added and passed through ReLU.
pub fn lower_residual(p: ResidualParams, in_shape: TensorShape) -> LayerGraph {
    standalone(in_shape, NodeKind::Res, |b, x| b.residual(x, p))
}

/// 1×1 (stride n) → BN → ReLU → N×N → BN → ReLU → 1×1 → BN, plus a 1×1
/// (stride n) → BN skip, added and passed through ReLU.
pub fn lower_bottleneck(p: BottleneckParams, in_shape: TensorShape) -> LayerGraph {
    standalone(in_shape, NodeKind::ResB, |b, x| b.bottleneck(x, p))
}

/// Lowers every active node. The FC node feeding OUTPUT becomes the
/// classifier (`num_classes` units followed by softmax); any other output
/// source gets a classifier appended.
pub fn compile(active: &ActiveSubgraph, input_shape: TensorShape, num_classes: usize) -> Result<LayerGraph, CompileError> {
    let malformed = |m: String| CompileError::Malformed(m);
    if active.nodes.len() < 2 {
        return Err(malformed("subgraph lacks INPUT or OUTPUT".into()));
    }
    if input_shape.numel() == 0 || num_classes == 0 {
        return Err(malformed("input shape and class count must be positive".into()));
    }
    let head = active.output_source();
    let mut b = Builder::new(input_shape);
    let mut produced: HashMap<Coord, usize> = HashMap::new();
    produced.insert(Coord::INPUT, 0);

    let (last_coord, last) = active.nodes.last().unwrap();
    if last.kind() != NodeKind::Output {
        return Err(malformed("last node is not OUTPUT".into()));
    }

    for (coord, node) in &active.nodes[1..active.nodes.len() - 1] {
        let inputs: Vec<usize> = node
            .inputs
            .iter()
            .map(|c| produced.get(c).copied().ok_or_else(|| malformed(format!("{coord} reads unlowered {c}"))))
            .collect::<Result<_, _>>()?;
        if inputs.len() != node.function.arity() {
            return Err(malformed(format!("{coord} has wrong arity")));
        }
        b.enter(*coord, node.kind());
        let x = inputs[0];
        let out = match node.function {
            NodeFunction::Conv { filters, kernel, stride } => b.conv_relu(x, kernel, stride, filters)?,
            NodeFunction::Fc { units } if *coord == head => {
                let d = b.push(Op::Dense { units: num_classes }, &[x])?;
                let _ = units;
                b.push(Op::Softmax, &[d])?
            }
            NodeFunction::Fc { units } => {
                let d = b.push(Op::Dense { units }, &[x])?;
                b.push(Op::Relu, &[d])?
            }
            NodeFunction::Max { kernel, stride } => b.pool(x, PoolMode::Max, kernel, stride)?,
            NodeFunction::Avg { kernel, stride } => b.pool(x, PoolMode::Avg, kernel, stride)?,
            NodeFunction::Sum => b.sum(inputs[0], inputs[1])?,
            NodeFunction::Inc { c1, c2, c3, r1, r2, r3 } => b.inception(x, InceptionParams { c1, c2, c3, r1, r2, r3 })?,
            NodeFunction::Res { n, m, stride, filters } => b.residual(x, ResidualParams { n, m, stride, filters })?,
            NodeFunction::ResB { n, stride, filters, reduce } => {
                b.bottleneck(x, BottleneckParams { n, stride, filters, reduce })?
            }
            NodeFunction::Input | NodeFunction::Output => {
                return Err(malformed(format!("{coord}: INPUT/OUTPUT inside the grid")));
            }
        };
        produced.insert(*coord, out);
    }

    let src = *produced.get(&head).ok_or_else(|| malformed("output source was not lowered".into()))?;
    let is_classifier = b.layers[src].op == Op::Softmax;
    let output = if is_classifier {
        src
    } else {
        b.enter(*last_coord, NodeKind::Output);
        let d = b.push(Op::Dense { units: num_classes }, &[src])?;
        b.push(Op::Softmax, &[d])?
    };
    Ok(b.finish(output))
}
