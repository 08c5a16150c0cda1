//! Recovery of the hidden units of a sigmoid-combination regression model
//! by clustering large-norm gradient estimates at random probe points.

pub mod candidates;
pub mod cluster;
pub mod config;
pub mod error;
pub mod gradient;
pub mod harness;
pub mod linalg;
pub mod matching;
pub mod model;
pub mod params;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod stats;
pub mod subspace;
pub mod verify;

pub use error::{Error, Result};
