//! SAGA Langevin dynamics with a random-map coupling construction.
//!
//! The crate runs the variance-reduced Langevin chain `(X_k, G_k)`, builds the
//! regenerating random-map representation used to couple two copies of it, and
//! measures the quantities that back an ergodic theorem for the chain:
//! meeting probabilities, mixing coefficients, moment bounds, and LLN errors.

pub mod coupling;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod randommap;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
pub use model::{BuiltinProblem, Component, Problem};
pub use randommap::{derive_constants, ConstantsBundle, CounterNoise, NoiseRecord, NoiseSource};
pub use sampler::{init_chain, run_chain, ChainState, GradientTable, RunOptions};
