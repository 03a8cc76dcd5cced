//! The chatter prediction network.

mod config;
pub mod layers;
mod network;
mod params;

pub use config::{ModelConfig, Variant};
pub use network::{
    scale_kernel, ChatterNet, GainMode, InfluenceState, IntervalTrace, Prediction, StaticCache, SubmissionCache,
    SubmissionInput, TecCache,
};
pub use params::{ConvIds, GruIds, Layout, LstmIds, ModelParams, ParamId, TecConvIds, Tensor};
