//! Signed infomax hyperbolic graph embeddings for signed link prediction.

pub mod autodiff;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod graph;
pub mod manifold;
pub mod mi;
pub mod model;
pub mod objective;
pub mod svd;
pub mod trainer;

pub use error::{Error, Result};
