use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{cross, dot, norm, sub, Point3};
use crate::error::{Error, Result};

/// Triangle mesh in centimetres with counter-clockwise (outward) winding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::validity(format!("triangle {t:?} indexes past {n} vertices")));
        }
        Ok(TriMesh { vertices, triangles })
    }

    pub fn empty() -> Self {
        TriMesh::default()
    }

    /// Axis-aligned box with outward winding.
    pub fn cuboid(min: Point3, max: Point3) -> Result<TriMesh> {
        if (0..3).any(|a| !(max[a] > min[a])) {
            return Err(Error::validity(format!("box {min:?}..{max:?} has no interior")));
        }
        let vertices =
            (0..8).map(|c: usize| std::array::from_fn(|a| if c >> a & 1 == 1 { max[a] } else { min[a] })).collect();
        let triangles = vec![
            [0, 2, 1],
            [1, 2, 3],
            [4, 5, 6],
            [5, 7, 6],
            [0, 1, 4],
            [1, 5, 4],
            [2, 6, 3],
            [3, 6, 7],
            [0, 4, 2],
            [2, 4, 6],
            [1, 3, 5],
            [3, 7, 5],
        ];
        TriMesh::new(vertices, triangles)
    }

    /// Sphere from a regular octahedron with `level` rounds of 4-way midpoint
    /// subdivision (`8·4^level` triangles). Symmetric under the octahedral
    /// group exactly, including in floating point.
    pub fn octasphere(center: Point3, radius: f64, level: u32) -> Result<TriMesh> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::validity(format!("sphere radius must be positive, got {radius}")));
        }
        let mut unit: Vec<Point3> = vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let mut tris: Vec<[u32; 3]> =
            vec![[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]];
        for _ in 0..level {
            let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
            let mut next = Vec::with_capacity(tris.len() * 4);
            for t in &tris {
                let m: [u32; 3] = std::array::from_fn(|k| {
                    let (a, b) = (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]));
                    *mid.entry((a, b)).or_insert_with(|| {
                        let (pa, pb) = (unit[a as usize], unit[b as usize]);
                        unit.push(symmetric_normalize([pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]]));
                        (unit.len() - 1) as u32
                    })
                });
                next.push([t[0], m[0], m[2]]);
                next.push([m[0], t[1], m[1]]);
                next.push([m[2], m[1], t[2]]);
                next.push([m[0], m[1], m[2]]);
            }
            tris = next;
        }
        let vertices = unit.iter().map(|u| std::array::from_fn(|a| center[a] + radius * u[a])).collect();
        TriMesh::new(vertices, tris)
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Point3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive for outward-facing winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    pub fn bounding_box(&self) -> Option<(Point3, Point3)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        Some((lo, hi))
    }

    /// Area-weighted vertex normals (unit length where defined).
    pub fn vertex_normals(&self) -> Vec<Point3> {
        let mut n = vec![[0.0; 3]; self.vertices.len()];
        for tri in &self.triangles {
            let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
            let f = cross(sub(b, a), sub(c, a));
            for &i in tri {
                let v = &mut n[i as usize];
                v[0] += f[0];
                v[1] += f[1];
                v[2] += f[2];
            }
        }
        n.into_iter().map(super::normalize).collect()
    }

    /// Every undirected edge must border exactly two triangles that traverse
    /// it in opposite directions.
    pub fn check_watertight(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::validity("mesh has no triangles"));
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.triangles.len() * 3);
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if a == b {
                    return Err(Error::validity(format!("triangle {tri:?} repeats a vertex")));
                }
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            let twin = directed.get(&(b, a)).copied().unwrap_or(0);
            if count != 1 || twin != 1 {
                return Err(Error::validity(format!(
                    "edge ({a}, {b}) is used {count} times forward and {twin} times backward"
                )));
            }
        }
        Ok(())
    }

    /// Index range, watertightness and outward orientation.
    pub fn validate(&self) -> Result<()> {
        self.check_watertight()?;
        let v = self.signed_volume();
        if !(v > 0.0) {
            return Err(Error::validity(format!("mesh encloses non-positive volume {v}")));
        }
        Ok(())
    }

    pub fn translated(&self, offset: Point3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|&v| super::add(v, offset)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Concatenates disjoint meshes into one vertex/triangle list.
    pub fn merged(parts: &[TriMesh]) -> TriMesh {
        let mut out = TriMesh::empty();
        for p in parts {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&p.vertices);
            out.triangles.extend(p.triangles.iter().map(|t| t.map(|i| i + base)));
        }
        out
    }

    pub fn to_obj(&self) -> String {
        self.obj_text(None)
    }

    /// OBJ text with optional per-vertex RGB in `[0, 1]` appended to each `v` line.
    pub fn obj_text(&self, colors: Option<&[[f64; 3]]>) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 24);
        for (i, v) in self.vertices.iter().enumerate() {
            match colors {
                Some(c) => {
                    let [r, g, b] = c[i];
                    let _ = writeln!(s, "v {} {} {} {r:.6} {g:.6} {b:.6}", v[0], v[1], v[2]);
                }
                None => {
                    let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
                }
            }
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_obj())?;
        Ok(())
    }

    pub fn read_obj(path: &Path) -> Result<TriMesh> {
        Ok(Self::parse_obj(&fs::read_to_string(path)?)?.0)
    }

    /// Parses vertices, optional vertex colors and triangular faces.
    pub fn parse_obj(text: &str) -> Result<(TriMesh, Option<Vec<[f64; 3]>>)> {
        let mut vertices = Vec::new();
        let mut colors = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = |what: &str| Error::parse(format!("OBJ line {}: {what}", lineno + 1));
            match it.next() {
                Some("v") => {
                    let nums: Vec<f64> = it
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("bad number"))?;
                    match nums.len() {
                        3 => vertices.push([nums[0], nums[1], nums[2]]),
                        6 => {
                            vertices.push([nums[0], nums[1], nums[2]]);
                            colors.push([nums[3], nums[4], nums[5]]);
                        }
                        _ => return Err(bad("vertex needs 3 coordinates (plus optional RGB)")),
                    }
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|t| {
                            let first = t.split('/').next().unwrap_or("");
                            first.parse::<i64>().ok().filter(|&i| i >= 1).map(|i| (i - 1) as u32)
                        })
                        .collect::<Option<_>>()
                        .ok_or_else(|| bad("bad face index"))?;
                    if idx.len() != 3 {
                        return Err(bad("only triangular faces are supported"));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        if !colors.is_empty() && colors.len() != vertices.len() {
            return Err(Error::parse("OBJ mixes colored and uncolored vertices"));
        }
        let mesh = TriMesh::new(vertices, triangles)?;
        Ok((mesh, (!colors.is_empty()).then_some(colors)))
    }
}

/// Normalization whose rounding is invariant under coordinate permutations
/// and sign flips.
fn symmetric_normalize(p: Point3) -> Point3 {
    let mut sq = p.map(|v| v * v);
    sq.sort_by(f64::total_cmp);
    let n = (sq[0] + sq[1] + sq[2]).sqrt();
    p.map(|v| v / n)
}
