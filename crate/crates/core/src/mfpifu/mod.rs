//! Coarse stage: a stacked-hourglass feature pyramid per view and a
//! pixel-aligned occupancy MLP over multi-scale features plus depth.

mod config;
mod model;
mod train;

pub(crate) use config::join as config_join;
pub use config::CoarseConfig;
pub use model::{CoarseNet, FeaturePyramid, MultiViewSample, PointQuery};
pub use train::{coarse_training_points, continue_coarse, reconstruct_coarse, train_coarse, EpochLog};
