//! Unlikelihood training for dialogue generation at desk scale.
//!
//! The numeric core is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient verification); the aliases below name the common choices.

pub mod autodiff;
pub mod data;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod scalar;
pub mod selftest;
pub mod text;
pub mod train;
pub mod vocab_stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Array32 = autodiff::Array<f32>;
pub type Array64 = autodiff::Array<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
