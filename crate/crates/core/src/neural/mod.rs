//! Minimal dense neural-network substrate shared by every learned model:
//! matrices, a fixed MLP layer set with hand-written backward passes, Adam,
//! gradient clipping and weight persistence.

pub mod loss;
pub mod matrix;
pub mod network;
pub mod optim;
pub mod persist;
pub mod standardize;

pub use matrix::Matrix;
pub use network::{Activation, ForwardCache, Gradients, LayerSpec, Mode, Network};
pub use optim::{clip_grad_norm, global_norm, AdamState};
pub use standardize::Standardizer;
