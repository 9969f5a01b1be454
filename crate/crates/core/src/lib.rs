//! Deterministic simulator for cross-device federated learning.
pub mod cost;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod nn;
pub mod seed;

pub use error::{Error, IdxError, Result};
