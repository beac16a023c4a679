//! Dense numerics substrate: matrices, feedforward networks and the Adam optimizer.

mod adam;
mod matrix;
mod net;

pub use adam::{AdamConfig, AdamState};
pub use matrix::{Matrix, Transpose};
pub use net::{
    sigmoid, DenseLayer, FeedforwardNet, ForwardTrace, Gradients, HiddenActivation, LayerGradient,
    OutputActivation, SIGMOID_CLAMP,
};
