//! Minimal CNN engine: float training with an 8-bit quantized forward pass
//! whose convolution products come from a multiplier table, a float
//! straight-through backward pass, and top-1 accuracy.

mod conv;
mod net;
pub mod ops;
mod quant;
mod tensor;
mod train;
mod weights;

use thiserror::Error;

use crate::multsim::MultiplierModel;

pub use conv::{conv_backward, conv_forward_approx, conv_forward_float, ConvGeometry, ConvGrads};
pub use net::{backward, forward, forward_pass, Gradients, Phase, Trace};
pub use quant::{quantize, QuantTensor};
pub use tensor::Tensor;
pub use train::{
    cross_entropy, evaluate_accuracy, loss_and_gradients, predict, train, Samples, TrainConfig, TrainHistory, Trainer,
};
pub use weights::{LayerParams, ParamTensor, WeightStore};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How convolution products are computed in the forward pass.
#[derive(Clone, Copy, Debug)]
pub enum ConvArithmetic<'a> {
    /// Plain floating point, used as the reference.
    Float,
    /// Quantize operands to 8-bit sign-magnitude and read every product from
    /// the model's table.
    Approx(&'a MultiplierModel),
}
