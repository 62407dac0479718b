//! One-shot human motion transfer with a 2D flow-warping branch and a 2.5D
//! neural-texture branch, blended into the final frame.
//!
//! Tensors are NCHW. Spatial coordinates used for sampling are normalized to
//! `[-1, 1]` with texel-centre alignment (see [`sampling`]).

pub mod blender;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod inference;
pub mod iuv;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod nn;
pub mod parts;
pub mod sampling;
pub mod texture;
pub mod trainer;
pub mod types;
pub mod warp;

pub use error::{Error, Result};
pub use types::{
    iuv_to_onehot, Image, IuvMap, Keypoint, KeypointSet, Mask, OneHotIuv, SampleRecord, NUM_PARTS, NUM_SCORE_CHANNELS,
    ONEHOT_CHANNELS,
};
