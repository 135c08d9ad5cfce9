//! EmMixformer eye-movement recognition: preprocessing, a small tensor
//! engine with reverse-mode differentiation, the network and its training
//! loop, and biometric verification metrics.

pub mod attention;
pub mod attlstm;
pub mod cli;
pub mod cnn;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fourier;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{no_grad, ComplexTensor, Tensor};
