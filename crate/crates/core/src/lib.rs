//! Graph attention with multi-hop attention diffusion.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every numerical
//! piece of the model:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`graph`] | edge-indexed graphs, node and knowledge-graph datasets |
//! | [`numerics`] | dense matrices, a reverse-mode tape, Adam, dense solve, Jacobi eigensolver |
//! | [`attention`] | edge scores, per-node softmax, PPR attention diffusion and its dense oracle |
//! | [`net`] | stacked blocks (multi-head diffusion, residuals, layer norm, feed-forward) |
//! | [`tasks`] | classifier and DistMult heads, losses, filtered ranking metrics |
//! | [`trainer`] | training loops with early stopping, random hyperparameter search |
//! | [`analysis`] | spectral verification and attention discrepancy |
//! | [`toy`] | small synthetic datasets with known structure |
//!
//! File formats, checkpoints and the command-line runner live in the
//! companion `magna` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod attention;
mod error;
pub mod graph;
pub(crate) mod math;
pub mod net;
pub mod numerics;
pub mod params;
pub mod tasks;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Edge, Graph, KgDataset, NodeDataset, Split};
pub use numerics::{Matrix, Tape, Var};
pub use params::{ParamId, ParamStore};
