//! Convolutional networks viewed as Gaussian processes.
//!
//! The crate contains the exact and recursive covariance kernels of random
//! 1-D convolutional networks, samplers for the network prior and its GP
//! counterpart, exact GP posterior inference, an unbiased squared-MMD
//! two-sample estimator with a permutation test, and a Lyapunov-type CLT
//! bound for the first convolutional layer. The [`harness`] module drives
//! seeded experiment grids that write byte-stable CSV and SVG output.

pub mod cltbound;
pub mod error;
pub mod gp;
pub mod harness;
pub mod inputs;
pub mod kernels;
pub mod linalg;
pub mod mmd;
pub mod nets;

pub use error::{Error, Result};
