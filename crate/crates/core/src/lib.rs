//! Neural networks whose weight matrices are virtual: every connection
//! reads one of a small number of shared weights, chosen by a seeded hash
//! of its position, and a second hash flips its sign.
//!
//! The crate covers the hashed layer and three baselines (dense, random
//! edge removal, low rank), a feature-hashing reference implementation used
//! as a test oracle, parameter budget arithmetic, SGD training with
//! momentum, dropout and distillation targets, MNIST IDX loading and the
//! experiment driver behind the `hashednets` binary.

pub mod budget;
pub mod data;
pub mod error;
pub mod experiment;
pub mod feature_hash;
pub mod hashing;
pub mod layers;
pub mod math;
pub mod model_io;
pub mod network;
pub mod training;

pub use error::{Error, Result};
