//! Matrix-free Euclidean distance geometry.
//!
//! Reconstructs point configurations from a subset of pairwise squared
//! distances by driving an iteratively reweighted least-squares scheme on
//! the Gram matrix, with every large object kept in compressed form: the
//! iterate as `(residual, U, coefficients)`, the weight operator through
//! its action, and all linear systems solved by conjugate gradients.

pub mod basis;
pub mod dataio;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod irls;
pub mod linalg;
pub mod tangent;

pub use error::{EdgError, Result};
