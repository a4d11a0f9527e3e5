//! Descriptor learning with a triplet objective regularized by neighborhood topology.
//!
//! Descriptors are unit vectors. Each one is reconstructed as an affine
//! combination of its nearest neighbors inside its batch, and the weights
//! form a sparse topology vector. Matching descriptors are pulled together
//! both in Euclidean distance and in topology distance, while the hardest
//! non-matching descriptor in the batch is pushed away.

// Negated comparisons reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod inspect;
pub mod knn;
pub mod linalg;
pub mod loss;
pub mod topology;
pub mod train;

pub use error::{Error, Result};
