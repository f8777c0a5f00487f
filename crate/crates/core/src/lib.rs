pub mod baselines;
pub mod checkpoint;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod noisemodel;
pub mod scgn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scgn::{ArchConfig, ModelParams, Variant};
pub use tensor::{Backend, ComplexTensor, Eager, Tape, Tensor, Var};
