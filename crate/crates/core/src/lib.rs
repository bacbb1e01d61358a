//! Core library for a desk-scale online adaptation simulator.
//!
//! The pieces, bottom to top:
//!
//! - [`numerics`]: dense matrices, stable softmax, normalized entropy, seeded RNG
//! - [`model`]: small MLP classifier with projection head, analytic backward, SGD
//! - [`plsim`]: pseudo-label simulation with controlled quality and quantity
//! - [`losses`]: contrastive+separation and cross-entropy adaptation objectives
//! - [`scenario`]: synthetic category-shift scenarios and feature-file ingestion
//! - [`harness`]: the online stream loop and its metrics

pub mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod plsim;
pub mod scenario;

pub use error::{Error, Result};
