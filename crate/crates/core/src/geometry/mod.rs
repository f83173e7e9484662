//! Watertight mesh utilities: projection, inside/outside labeling, surface
//! sampling, voxelization, lattice interpolation and iso-surface extraction.
//!
//! Distances are in centimetres. Occupancy uses inside = 1, outside = 0.

mod bvh;
mod camera;
mod interp;
mod marching_cubes;
mod mesh;
mod occupancy;
mod sampling;
mod voxel;

pub use bvh::{closest_on_triangle, Bvh, RayHit};
pub use camera::{orbit_rotation, orthographic_rig, sin_cos_deg, Camera, Projection};
pub use interp::interp_grid;
pub use marching_cubes::{marching_cubes, marching_cubes_field};
pub use mesh::TriMesh;
pub use occupancy::{occupancy_label, InsideTester, SURFACE_EPS};
pub use sampling::{sample_displaced, sample_surface, sample_training_points, LabeledPoint, SigmaSpec, SurfaceSampler};
pub use voxel::{voxelize, CubeBounds, VoxelGrid, OVOX_HEADER_LEN, OVOX_MAGIC};

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize(a: Point3) -> Point3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        a
    }
}

#[inline]
pub fn dist(a: Point3, b: Point3) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn dist2_points(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}
