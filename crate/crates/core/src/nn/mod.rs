//! Minimal neural-network toolkit: tensors, sequential networks with
//! reverse-mode gradients, and Adam.

mod conv;
pub mod gradcheck;
pub mod scalar;
pub mod layers;
pub mod network;
pub mod params;
pub mod tensor;

pub use layers::{Activation, LayerKind, LayerSpec, Padding};
pub use network::{GraphSpec, Mode, Network};
pub use params::{AdamConfig, ParamId, Parameter, ParameterStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
