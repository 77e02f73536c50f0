//! Reverse-mode automatic differentiation over dense `f64` tensors.

pub(crate) mod crf_kernel;
mod gemm;
pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{adam_step, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{logsumexp, sigmoid, Tape, Var};
pub use tensor::Tensor;
