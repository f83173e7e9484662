//! Coarse-to-fine reconstruction of watertight bodies as occupancy fields.
//!
//! The coarse stage ([`mfpifu`]) predicts occupancy from calibrated
//! multi-view images using a multi-stage hourglass feature pyramid. The
//! refinement stage ([`vsr`]) voxelizes the coarse surface and predicts a
//! higher-resolution occupancy field from multi-scale 3D convolution
//! features. Both are trained with the small autodiff engine in [`tensor`].

// `!(x > 0.0)` is how validation rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Geometry loops index several per-axis arrays by the same axis.
#![allow(clippy::needless_range_loop)]

pub mod datagen;
pub mod error;
pub mod geometry;
pub mod kv;
pub mod metrics;
pub mod mfpifu;
mod mlp;
pub mod parallel;
pub mod tensor;
pub mod vsr;

pub use error::{Error, Result};
