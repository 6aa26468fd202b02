//! Dense network substrate: plain and noisy linear layers, a categorical Q-network head,
//! backpropagation and an Adam optimizer, all in double precision.

mod adam;
mod layers;
mod qnet;

pub use adam::{adam_update, Adam, AdamConfig};
pub use layers::{factorized_noise, Activation, DenseLayer, Layer, NoisyDenseLayer};
pub use qnet::{
    gather_actions, softmax_atoms, CategoricalQNet, NamedTensor, ParamFile, QNetConfig, Support,
    PARAM_FORMAT_VERSION,
};
