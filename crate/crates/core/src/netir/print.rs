use std::fmt;

use super::{LayerGraph, Op, Padding, PoolMode};

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Op::Input => write!(f, "input"),
            Op::Conv { kernel, stride, filters } => write!(f, "conv {kernel}x{kernel}/{stride} f={filters}"),
            Op::BatchNorm => write!(f, "batchnorm"),
            Op::Relu => write!(f, "relu"),
            Op::Pool { mode, window: (kh, kw), stride: (sh, sw), padding } => {
                let m = match mode {
                    PoolMode::Max => "maxpool",
                    PoolMode::Avg => "avgpool",
                };
                let p = match padding {
                    Padding::Valid => "valid",
                    Padding::Same => "same",
                };
                write!(f, "{m} {kh}x{kw}/{sh}x{sw} {p}")
            }
            Op::ChannelPad { channels } => write!(f, "pad-channels {channels}"),
            Op::Add => write!(f, "add"),
            Op::Concat => write!(f, "concat"),
            Op::Dense { units } => write!(f, "dense {units}"),
            Op::Softmax => write!(f, "softmax"),
        }
    }
}

/// One layer per line: index, originating node, op, inputs, shapes, counts.
impl fmt::Display for LayerGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.layers.iter().enumerate() {
            let inputs = l.inputs.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(",");
            let shape_in = match l.input_shapes.as_slice() {
                [] => "-".to_string(),
                [s] => s.to_string(),
                many => many.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+"),
            };
            writeln!(
                f,
                "{i:>3}  {:<6} {:<8} {:<24} [{inputs}]  {shape_in} -> {}  params={} mults={}",
                l.node_kind.label(),
                l.node.to_string(),
                l.op.to_string(),
                l.output_shape,
                l.params,
                l.mults
            )?;
        }
        write!(f, "total params={} mults={}", self.param_count(), self.mult_count())
    }
}
