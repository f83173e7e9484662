//! Refinement stage: multi-scale 3D convolution features of a coarse
//! occupancy grid, queried trilinearly by an occupancy MLP at any resolution.

mod config;
mod model;
mod train;

pub use config::VsrConfig;
pub use model::{grid_tensor, sample_vsr_points, VoxelFeaturePyramid, VsrNet};
pub use train::{continue_vsr, refine, refine_grid, train_vsr, VsrSample};
