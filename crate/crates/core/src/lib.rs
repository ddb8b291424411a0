//! Weight-sharing supernet training with path and data importance sampling,
//! gradient-variance tracking and ranking evaluation against standalone
//! training.
//!
//! The network is a small dense cell: nodes are summed edge outputs, each
//! edge carries one operation chosen from a candidate set, and a path picks
//! one operation per edge.

// Negated comparisons are the NaN-rejecting form used by validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod nn;
pub mod optim;
pub mod ranking;
pub mod rng;
pub mod sampling;
pub mod search;
pub mod space;
pub mod supernet;
pub mod tensor;
pub mod train;
pub mod variance;

pub use error::{Error, Result};
pub use space::{CellSpec, OpKind, Path};
pub use supernet::{SubModel, Supernet};
pub use tensor::Tensor;
