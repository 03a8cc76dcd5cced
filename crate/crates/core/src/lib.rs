//! Chatter-intensity prediction from news and submission streams.

pub mod caspred;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod stream;
pub mod synth;
pub mod text;
pub mod train;

pub use error::{Error, Result};
