//! Dense `f32` tensors with a tape-based reverse-mode differentiator, the
//! primitives needed by small MLP and strided-convolution autoencoders, an
//! Adam optimizer and a flat binary checkpoint format.

pub mod checkpoint;
mod conv;
mod element;
mod error;
mod gemm;
mod graph;
pub mod init;
mod optim;
mod params;
mod tensor;

pub use conv::ConvGeometry;
pub use element::Element;
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Record, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamSet};
pub use tensor::Tensor;
