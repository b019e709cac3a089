//! Multi-label odor descriptor prediction from 3D molecular structure.
//!
//! The pipeline goes from atoms to a Coulomb (or bond adjacency) matrix. An
//! optional Laplacian-spectrum positional encoding is added, then a residual
//! graph convolution stack, sum pooling and a sigmoid multi-label head.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod chemio;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod model;
pub mod repr;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
