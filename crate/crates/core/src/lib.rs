//! Multi-objective Cartesian genetic programming search over small
//! convolutional networks, co-designed with the 8-bit approximate multiplier
//! used by their convolutional layers.
//!
//! The crate is organised bottom-up:
//!
//! - [`multsim`]: 8-bit unsigned multipliers as exhaustive lookup tables.
//! - [`cgpnet`]: the CGP genotype, template seeding and mutation.
//! - [`netir`]: lowering of active CGP nodes into a shape-checked layer graph.
//! - [`qengine`]: a small tensor engine with an approximate quantized
//!   convolution forward pass and an exact floating-point backward pass.
//! - [`moea`]: dominance, non-dominated sorting, crowding and the
//!   generational loop.
//! - [`bench`]: datasets, run configuration, artifacts and reports.
//!
//! The numeric core in [`qengine`] is generic over [`Scalar`]; the aliases
//! below fix the precision used by the search (`f32`) and by reference
//! checks (`f64`).

pub mod bench;
pub mod cgpnet;
pub mod moea;
pub mod multsim;
pub mod netir;
pub mod qengine;
mod scalar;

pub use scalar::Scalar;

/// Precision used for search-time training.
pub type Real = f32;

pub type Tensor32 = qengine::Tensor<f32>;
pub type Tensor64 = qengine::Tensor<f64>;
pub type WeightStore32 = qengine::WeightStore<f32>;
pub type WeightStore64 = qengine::WeightStore<f64>;
pub type Trainer32<'a> = qengine::Trainer<'a, f32>;
pub type Trainer64<'a> = qengine::Trainer<'a, f64>;
