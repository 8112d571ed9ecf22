//! Minimal dense autograd used by the acoustic model and the vocoder.

mod graph;
pub mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{log_sum_exp, sigmoid, softmax_in_place, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
