//! Finite-dimensional Koopman control family models built from snapshot data,
//! with a closed-form certificate of their worst-case relative prediction error.
//!
//! The pipeline is: evaluate a normal separable basis
//! ([`dictionary::NormalBasis`]) on a [`regression::SnapshotDataset`], fit the
//! top block of the EDMD matrix ([`regression::fit_top_block`]), and certify
//! the basis with [`consistency::certify`], whose `rrmse_max` is the exact
//! worst relative RMS one-step error over every function in `span(H)`.

pub mod consistency;
pub mod dictionary;
pub mod error;
pub mod io;
pub mod learning;
pub mod linalg;
pub mod predictor;
pub mod regression;
pub mod systems;

pub use consistency::{certify, ConsistencyReport};
pub use dictionary::{make_bilinear, make_lifted_linear, NormalBasis, StateDictionary};
pub use error::{KcfError, Result};
pub use regression::{edmd_full, fit_top_block, FittedModel, SnapshotDataset};
