//! Regularized non-negative matrix factorization, by multiplicative updates
//! and by an unrolled network whose layers learn their own update matrices.

pub mod bench;
pub mod data;
pub mod error;
pub mod matrix;
pub mod mu;
pub mod net;
pub mod nnls;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{NonNegMatrix, NonNegVector, RegParams, EPS_DIV};
