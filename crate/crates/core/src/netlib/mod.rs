//! Small dense networks with hand-written reverse-mode gradients and Adam.

mod adam;
mod mlp;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{Dense, ForwardCache, Mlp, OutputActivation};
pub use params::{hard_update, read_params, soft_update, write_params, Manifest, ModelParameters};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("parameter manifests differ: {0} vs {1}")]
    Manifest(String, String),
    #[error("non-finite gradient; step skipped")]
    NonFiniteGradient,
    #[error("malformed checkpoint: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Flattens per-layer gradients in the order used by [`Mlp::flatten`].
pub fn flatten_grads(layers: &[Dense]) -> Vec<f64> {
    mlp::flatten_layers(layers)
}
