//! Mixture of decoupled message-passing experts for node classification.
//!
//! The model stacks MoE blocks, each mixing four propagation/transformation
//! experts (PP, PT, TP, TT) with a per-node soft router, then refines the
//! result with a hard-routed gated feed-forward network. Routing entropy is
//! added to the loss to sharpen or smooth expert selection; [`theory`]
//! checks the closed-form routing update this regularizer induces.

pub mod autodiff;
pub mod cli;
pub mod effn;
pub mod error;
pub mod experts;
pub mod graph;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod routing;
pub mod tensor;
pub mod theory;
pub mod train;

pub use error::{GnnMoeError, Result};
