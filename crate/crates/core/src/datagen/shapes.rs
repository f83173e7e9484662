use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{add, dist, dot, marching_cubes_field, scale, sub, Point3, TriMesh};

/// Procedural shape family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeKind {
    /// Subdivided octahedron (`8·4^level` triangles).
    Sphere { radius: f64, level: u32 },
    /// Segment `a`–`b` swept by `radius`, meshed from its distance field.
    Capsule { a: Point3, b: Point3, radius: f64 },
    /// Body-like smooth union of 11 capsules and ellipsoids with a random pose.
    Articulated { height: f64 },
}

/// One procedural subject. Positions are relative to `center`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub kind: ShapeKind,
    pub center: Point3,
    pub seed: u64,
    /// Lattice nodes along the longest side when meshing a distance field.
    pub field_resolution: usize,
}

impl SceneSpec {
    pub fn articulated(height: f64, center: Point3, seed: u64) -> Self {
        SceneSpec { kind: ShapeKind::Articulated { height }, center, seed, field_resolution: 96 }
    }
}

/// Signed-distance primitives.
#[derive(Clone, Copy, Debug)]
enum Primitive {
    Capsule { a: Point3, b: Point3, r: f64 },
    Ellipsoid { c: Point3, radii: Point3 },
}

impl Primitive {
    fn sdf(&self, p: Point3) -> f64 {
        match *self {
            Primitive::Capsule { a, b, r } => {
                let ab = sub(b, a);
                let t = (dot(sub(p, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
                dist(p, add(a, scale(ab, t))) - r
            }
            Primitive::Ellipsoid { c, radii } => {
                // First-order distance estimate; exact on spheres.
                let q = sub(p, c);
                let k0 = (0..3).map(|i| (q[i] / radii[i]).powi(2)).sum::<f64>().sqrt();
                let k1 = (0..3).map(|i| (q[i] / (radii[i] * radii[i])).powi(2)).sum::<f64>().sqrt();
                if k1 == 0.0 {
                    -radii.iter().copied().fold(f64::INFINITY, f64::min)
                } else {
                    k0 * (k0 - 1.0) / k1
                }
            }
        }
    }

    fn bbox(&self) -> (Point3, Point3) {
        match *self {
            Primitive::Capsule { a, b, r } => {
                (std::array::from_fn(|i| a[i].min(b[i]) - r), std::array::from_fn(|i| a[i].max(b[i]) + r))
            }
            Primitive::Ellipsoid { c, radii } => (sub(c, radii), add(c, radii)),
        }
    }
}

/// Polynomial smooth minimum with blend radius `k`.
fn smin(a: f64, b: f64, k: f64) -> f64 {
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k / 4.0
}

fn rot_x(v: Point3, deg: f64) -> Point3 {
    let (s, c) = deg.to_radians().sin_cos();
    [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]]
}

fn rot_y(v: Point3, deg: f64) -> Point3 {
    let (s, c) = deg.to_radians().sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

fn rot_z(v: Point3, deg: f64) -> Point3 {
    let (s, c) = deg.to_radians().sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// Posed body primitives, y up, facing +z, centered near the origin.
fn articulated_parts(height: f64, seed: u64) -> Vec<Primitive> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..=hi);
    let h = height;
    let girth = u(0.9, 1.1);
    let limb = u(0.92, 1.08);
    let yaw = u(-30.0, 30.0);
    let mut parts = vec![
        Primitive::Ellipsoid { c: [0.0, 0.12 * h, 0.0], radii: [0.13 * h * girth, 0.2 * h, 0.08 * h * girth] },
        Primitive::Ellipsoid { c: [0.0, 0.43 * h, 0.01 * h], radii: [0.065 * h, 0.08 * h, 0.07 * h] },
        Primitive::Capsule { a: [0.0, 0.3 * h, 0.0], b: [0.0, 0.38 * h, 0.0], r: 0.035 * h },
    ];
    for side in [-1.0, 1.0] {
        let shoulder = [side * 0.15 * h, 0.28 * h, 0.0];
        let abduct = u(10.0, 80.0);
        let flex = u(-30.0, 30.0);
        let elbow = u(0.0, 90.0);
        let upper = rot_x(rot_z([0.0, -1.0, 0.0], side * abduct), -flex);
        let fore = rot_x(rot_z([0.0, -1.0, 0.0], side * abduct * 0.7), -(flex + elbow));
        let elbow_at = add(shoulder, scale(upper, 0.17 * h * limb));
        let wrist = add(elbow_at, scale(fore, 0.16 * h * limb));
        parts.push(Primitive::Capsule { a: shoulder, b: elbow_at, r: 0.035 * h });
        parts.push(Primitive::Capsule { a: elbow_at, b: wrist, r: 0.03 * h });

        let hip = [side * 0.07 * h, -0.06 * h, 0.0];
        let hip_abduct = u(0.0, 25.0);
        let hip_flex = u(-25.0, 25.0);
        let knee = u(0.0, 60.0);
        let thigh = rot_x(rot_z([0.0, -1.0, 0.0], side * hip_abduct), -hip_flex);
        let shin = rot_x(rot_z([0.0, -1.0, 0.0], side * hip_abduct * 0.5), knee - hip_flex);
        let knee_at = add(hip, scale(thigh, 0.22 * h * limb));
        let ankle = add(knee_at, scale(shin, 0.21 * h * limb));
        parts.push(Primitive::Capsule { a: hip, b: knee_at, r: 0.055 * h * girth });
        parts.push(Primitive::Capsule { a: knee_at, b: ankle, r: 0.04 * h });
    }
    let lift = 0.03 * h;
    for p in &mut parts {
        let tf = |v: Point3| add(rot_y(v, yaw), [0.0, lift, 0.0]);
        *p = match *p {
            Primitive::Capsule { a, b, r } => Primitive::Capsule { a: tf(a), b: tf(b), r },
            // Ellipsoid axes stay world-aligned; only the center follows the yaw.
            Primitive::Ellipsoid { c, radii } => Primitive::Ellipsoid { c: tf(c), radii },
        };
    }
    parts
}

/// Meshes the zero level set of a smooth union of primitives.
fn mesh_union(parts: &[Primitive], blend: f64, resolution: usize, center: Point3) -> Result<TriMesh> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in parts {
        let (a, b) = p.bbox();
        for i in 0..3 {
            lo[i] = lo[i].min(a[i]);
            hi[i] = hi[i].max(b[i]);
        }
    }
    let longest = (0..3).map(|i| hi[i] - lo[i]).fold(0.0, f64::max);
    let h = longest / (resolution.max(8) - 1) as f64;
    let pad = 2.0 * h;
    let dims: [usize; 3] = std::array::from_fn(|i| ((hi[i] - lo[i] + 2.0 * pad) / h).ceil() as usize + 1);
    let origin: Point3 = std::array::from_fn(|i| lo[i] - pad);
    let ramp = 2.0 * h;
    let mut values = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = [origin[0] + i as f64 * h, origin[1] + j as f64 * h, origin[2] + k as f64 * h];
                let d = parts.iter().map(|q| q.sdf(p)).reduce(|a, b| smin(a, b, blend)).unwrap_or(f64::INFINITY);
                values.push((0.5 - d / (2.0 * ramp)).clamp(0.0, 1.0) as f32);
            }
        }
    }
    let mesh = marching_cubes_field(&values, dims, add(origin, center), h, 0.5)?;
    mesh.validate()?;
    Ok(mesh)
}

/// Watertight, outward-oriented mesh for a scene spec.
pub fn generate_shape(spec: &SceneSpec) -> Result<TriMesh> {
    match spec.kind {
        ShapeKind::Sphere { radius, level } => TriMesh::octasphere(spec.center, radius, level),
        ShapeKind::Capsule { a, b, radius } => {
            if !(dist(a, b) > 0.0) || !(radius > 0.0) {
                return Err(Error::validity("capsule needs a positive length and radius"));
            }
            mesh_union(&[Primitive::Capsule { a, b, r: radius }], 1.0, spec.field_resolution, spec.center)
        }
        ShapeKind::Articulated { height } => {
            if !(height > 0.0) {
                return Err(Error::validity("articulated body height must be positive"));
            }
            let parts = articulated_parts(height, spec.seed);
            mesh_union(&parts, 0.03 * height, spec.field_resolution, spec.center)
        }
    }
}
