//! Curvature-guided adaptive graph rewiring for mesh-based learned simulators.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: mesh graph, per-frame state, trajectory files, hop distances and
//!   the normalized augmented adjacency matrix.
//! - [`transport`]: exact discrete optimal transport used for Wasserstein-1.
//! - [`curvature`]: Ollivier-Ricci edge/node curvature and bottleneck selection.
//! - [`rewiring`]: partner selection, delay scores and the layer-indexed
//!   neighbor schedule.
//! - [`processor`]: encoder / message-passing processor / decoder with analytic
//!   gradients, training and autoregressive rollout.
//! - [`analysis`]: numerical verification of the over-squashing Jacobian bound.
//! - [`synth`]: synthetic advection-diffusion trajectories and RMSE metrics.
//! - [`cli`]: the command-line front end.

pub mod analysis;
pub mod cli;
pub mod curvature;
pub mod error;
pub mod graph;
pub mod processor;
pub mod rewiring;
pub mod synth;
pub mod transport;

pub use error::{Error, Result};
pub use graph::{DenseMatrix, FrameState, MeshGraph, NodeType, Trajectory};
