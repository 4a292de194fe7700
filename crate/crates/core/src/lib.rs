//! Scene-graph based subjective-risk classification of lane-change clips.
//!
//! [`numcore`] and [`model`] are generic over the scalar type; the aliases
//! below fix it to `f64`, which the rest of the crate uses.

pub mod error;
pub mod model;
pub mod numcore;
pub mod pipeline;
pub mod scenegen;
pub mod scenegraph;

pub use error::{Error, Result};

pub type Tensor = numcore::Tensor<f64>;
pub type Tape = numcore::Tape<f64>;
pub type ParamStore = numcore::ParamStore<f64>;
pub type AdamState = numcore::AdamState<f64>;
pub type RiskModel = model::RiskModel<f64>;
pub type ForwardOutput = model::ForwardOutput<f64>;
pub type AttentionTrace = model::AttentionTrace<f64>;
pub type ClipGradient = model::ClipGradient<f64>;
