//! Message-passing GNNs, 1-WL color refinement and identity-effect
//! experiments, built on a small reverse-mode autodiff engine.

pub mod encodings;
pub mod error;
pub mod experiments;
pub mod gnn;
pub mod graph;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod wl;

pub use error::{Error, Result};
