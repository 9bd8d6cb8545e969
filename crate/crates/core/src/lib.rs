//! Decide whether a Finsler geometry is of Berwald type, using exact jet
//! derivatives at sampled points of the tangent bundle.

pub mod alpha_beta;
pub mod berwald;
pub mod cli;
pub mod error;
pub mod expr;
pub mod finsler;
pub mod fixtures;
pub mod geometry;
pub mod jets;
pub mod model_file;

pub use error::{Error, Result};
