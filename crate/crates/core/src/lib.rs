//! Residual-stream dynamics toolkit.
//!
//! Activations are captured at two hook points per transformer layer (before
//! the attention norm and before the MLP norm) at the last token, giving a
//! `samples × 2L × units` tensor ([`RsTensor`]). Every analysis consumes that
//! tensor:
//!
//! - [`stats`]: mean activations, per-unit layer-pair correlations, cosine
//!   similarity and velocity across sublayers
//! - [`mi`]: Gaussian-KDE mutual information between consecutive sublayers
//! - [`phase`]: per-unit (activation, layer-gradient) phase portraits and
//!   rotation counts against a shuffle null
//! - [`cae`]: compressing autoencoder with a 2-D bottleneck
//! - [`pca`] / [`teleport`]: SVD-PCA trajectories and activation teleportation
//!
//! [`model`] is a small seedable pre-norm transformer that produces such
//! tensors and accepts activation injections.

pub mod cae;
pub mod container;
pub mod corpus;
pub mod error;
pub mod export;
pub mod mi;
pub mod model;
pub mod optim;
pub mod pca;
pub mod phase;
pub mod rng;
pub mod sequence;
pub mod stats;
pub mod store;
pub mod teleport;

pub use error::{Error, Result};
pub use store::{HookPoint, RsTensor, RsdMetadata, SublayerLabel, Transition};
