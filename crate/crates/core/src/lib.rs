//! Optical flow estimation with two-level all-pairs cost volumes,
//! multi-radius correlation search, hierarchical motion field alignment,
//! correlation self-attention and recurrent refinement.
//!
//! Everything runs on the small reverse-mode tensor engine in [`tensor`].
//! [`model::HmaFlow`] ties the stages together; [`io`] holds the file
//! formats and [`train`] a single-pair trainer.

pub mod cost_volume;
pub mod csa;
pub mod encoders;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod hma;
pub mod io;
pub mod metrics;
pub mod model;
pub mod params;
pub mod selftest;
pub mod tensor;
pub mod train;
pub mod updater;

pub use cost_volume::{BaseCostVolume, Level, MotionVolume, SearchRadii};
pub use encoders::{ContextSet, FeatureSet};
pub use error::{Error, Result};
pub use flow::{FlowField, Resolution};
pub use hma::{AlignedCostVolume, Alignment};
pub use metrics::LossConfig;
pub use model::{HmaFlow, ModelConfig};
pub use params::ParamStore;
pub use tensor::{ConvSpec, DType, Float, Tensor};
