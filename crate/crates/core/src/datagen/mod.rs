//! Synthetic corpus: procedural bodies, multi-view renders, corrupted coarse
//! meshes and train/test splits.

mod corrupt;
mod dataset;
mod render;
mod shapes;

pub use corrupt::{corrupt_coarse, CorruptionSpec, CORRUPTION_ATTEMPTS};
pub use dataset::{
    build_dataset, view_subset, DatasetConfig, DatasetManifest, Sample, SampleRecord, Split, DATASET_FILE,
    MANIFEST_FILE, MANIFEST_HEADER,
};
pub use render::{render_view, render_views, GrayImage, AMBIENT};
pub use shapes::{generate_shape, SceneSpec, ShapeKind};
