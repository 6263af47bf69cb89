pub mod adam;
pub mod graph;
mod kernels;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{apply_updates, sigmoid, BnParams, BufferUpdate, Graph, Mode, Var, PROB_EPS};
pub use params::{Grads, Init, ParamId, ParamStore};
pub use tensor::Tensor;
