//! Spatio-temporal graph forecasting toolkit.
//!
//! The crate covers the full pipeline for forecasting signals that live on the
//! nodes of a road network:
//!
//! 1. [`graphlearn`] — infer a weighted graph from node embeddings by solving a
//!    smoothness-regularized convex program, and learn those embeddings with a
//!    graph variational autoencoder when only topology is available.
//! 2. [`graphcore`] — normalize adjacency into propagation operators and sample
//!    sparsified operators via dropout for Bayesian model averaging.
//! 3. [`model`] — a recurrent graph-convolutional forecaster (GRU cell whose
//!    affine maps are preceded by graph propagation) with projection in and
//!    decoding out.
//! 4. [`train`] — Adam with step-decayed learning rate over shuffled
//!    mini-batches of sliding windows.
//! 5. [`data`] / [`eval`] — dataset ingestion, windowing, metrics, baselines
//!    and report emission.
//!
//! Dense reverse-mode automatic differentiation ([`autodiff`]) underpins both
//! the autoencoder and the forecaster.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod graphcore;
pub mod graphlearn;
pub mod model;
pub mod train;
pub mod util;

pub use error::{Error, Result};
