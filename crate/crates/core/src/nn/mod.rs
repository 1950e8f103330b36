//! Minimal reverse-mode differentiation engine and the layers the acoustic
//! model is built from. Double precision throughout.

pub mod check;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use check::{
    check_layers, grad_check, grad_check_params, relative_error, scaled_relative_error, LayerCheck, ParamCheck,
};
pub use graph::{Gradients, Graph, Var};
pub use layers::{
    conv1d_forward, embedding_lookup, gru_forward, layer_norm, linear_forward, mse_loss, self_attention_forward,
    sinusoidal_positions, GruOutput, GruParams, GruWeights,
};
pub use optim::{Adam, AdamConfig, NoamSchedule};
pub use params::ParamStore;
pub use tensor::Tensor;
