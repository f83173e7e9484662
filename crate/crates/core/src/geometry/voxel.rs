use std::fs;
use std::path::Path;

use super::{Point3, TriMesh};
use crate::error::{Error, Result};

pub const OVOX_MAGIC: &[u8; 4] = b"OVOX";
/// Magic, resolution, origin and voxel size.
pub const OVOX_HEADER_LEN: usize = 4 + 4 + 3 * 4 + 4;

/// Axis-aligned cube `[min, min + size]` on every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubeBounds {
    pub min: Point3,
    pub size: f64,
}

impl CubeBounds {
    pub fn new(min: Point3, size: f64) -> Result<Self> {
        if !(size.is_finite() && size > 0.0) || min.iter().any(|v| !v.is_finite()) {
            return Err(Error::validity(format!("bounds must have positive finite size, got {size}")));
        }
        Ok(CubeBounds { min, size })
    }

    pub fn centered(center: Point3, half_extent: f64) -> Result<Self> {
        CubeBounds::new(center.map(|c| c - half_extent), 2.0 * half_extent)
    }

    pub fn center(&self) -> Point3 {
        self.min.map(|m| m + self.size / 2.0)
    }

    pub fn half_extent(&self) -> f64 {
        self.size / 2.0
    }

    pub fn max(&self) -> Point3 {
        self.min.map(|m| m + self.size)
    }

    pub fn contains(&self, p: Point3) -> bool {
        let hi = self.max();
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= hi[a])
    }

    /// Every mesh vertex lies in the closed cube.
    pub fn check_contains(&self, mesh: &TriMesh) -> Result<()> {
        match mesh.vertices.iter().find(|&&v| !self.contains(v)) {
            Some(v) => Err(Error::validity(format!("mesh vertex {v:?} lies outside bounds {self:?}"))),
            None => Ok(()),
        }
    }
}

/// Cubic grid of values in `[0, 1]`; voxel `(i, j, k)` spans
/// `origin + [i, i+1]·voxel_size` (and likewise for j, k), stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub resolution: usize,
    pub origin: Point3,
    pub voxel_size: f64,
    pub values: Vec<f32>,
}

impl VoxelGrid {
    pub fn new(resolution: usize, origin: Point3, voxel_size: f64, values: Vec<f32>) -> Result<Self> {
        let g = VoxelGrid { resolution, origin, voxel_size, values };
        g.validate()?;
        Ok(g)
    }

    pub fn zeros(resolution: usize, bounds: &CubeBounds) -> Result<Self> {
        VoxelGrid::new(resolution, bounds.min, bounds.size / resolution as f64, vec![0.0; resolution.pow(3)])
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::validity(format!("voxel grid resolution must be ≥ 2, got {}", self.resolution)));
        }
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(Error::validity(format!("voxel size must be positive, got {}", self.voxel_size)));
        }
        if self.values.len() != self.resolution.pow(3) {
            return Err(Error::validity(format!(
                "voxel grid holds {} values, expected {}",
                self.values.len(),
                self.resolution.pow(3)
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validity(format!("voxel value {v} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn bounds(&self) -> CubeBounds {
        CubeBounds { min: self.origin, size: self.voxel_size * self.resolution as f64 }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.index(i, j, k)]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point3 {
        let h = self.voxel_size;
        [
            self.origin[0] + (i as f64 + 0.5) * h,
            self.origin[1] + (j as f64 + 0.5) * h,
            self.origin[2] + (k as f64 + 0.5) * h,
        ]
    }

    /// Continuous index coordinates with voxel centers at integers.
    pub fn world_to_grid(&self, p: Point3) -> Point3 {
        std::array::from_fn(|a| (p[a] - self.origin[a]) / self.voxel_size - 0.5)
    }

    /// Position in `[0, 1]³` across the grid's outer faces.
    pub fn world_to_unit(&self, p: Point3) -> Point3 {
        let size = self.voxel_size * self.resolution as f64;
        std::array::from_fn(|a| (p[a] - self.origin[a]) / size)
    }

    pub fn occupied_count(&self) -> usize {
        self.values.iter().filter(|&&v| v >= 0.5).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(OVOX_HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(OVOX_MAGIC);
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        for o in self.origin {
            out.extend_from_slice(&(o as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.voxel_size as f32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < OVOX_HEADER_LEN || &bytes[..4] != OVOX_MAGIC {
            return Err(Error::parse("not an OVOX voxel file"));
        }
        let f = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = n
            .checked_pow(3)
            .filter(|c| bytes.len() == OVOX_HEADER_LEN + 4 * c)
            .ok_or_else(|| Error::parse(format!("OVOX payload does not hold {n}³ values")))?;
        let origin = [f(8) as f64, f(12) as f64, f(16) as f64];
        let values = (0..count).map(|i| f(OVOX_HEADER_LEN + 4 * i)).collect();
        VoxelGrid::new(n, origin, f(20) as f64, values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        VoxelGrid::from_bytes(&fs::read(path)?)
    }
}

/// Edge function with exact antisymmetry under swapping `a` and `b`.
#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (a[0] - p[0]) * (b[1] - p[1]) - (a[1] - p[1]) * (b[0] - p[0])
}

/// Whether a zero edge value counts as covered: decided by an infinitesimal
/// perturbation of the query point, so shared edges and vertices of a closed
/// surface are claimed consistently.
#[inline]
fn tie_covers(d: [f64; 2]) -> bool {
    -d[1] > 0.0 || (d[1] == 0.0 && d[0] > 0.0)
}

/// Sets each voxel to 1 iff its center lies inside the mesh (x-axis scanlines
/// with parity counting; centers on the surface count as inside).
pub fn voxelize(mesh: &TriMesh, resolution: usize, bounds: &CubeBounds) -> Result<VoxelGrid> {
    let bounds = CubeBounds::new(bounds.min, bounds.size)?;
    mesh.check_watertight()?;
    bounds.check_contains(mesh)?;
    let mut grid = VoxelGrid::zeros(resolution, &bounds)?;
    let n = resolution;
    let h = grid.voxel_size;
    let o = grid.origin;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n * n];

    for t in 0..mesh.triangles.len() {
        let [a, b, c] = mesh.corners(t);
        let (pa, pb, pc) = ([a[1], a[2]], [b[1], b[2]], [c[1], c[2]]);
        let lo_y = pa[0].min(pb[0]).min(pc[0]);
        let hi_y = pa[0].max(pb[0]).max(pc[0]);
        let lo_z = pa[1].min(pb[1]).min(pc[1]);
        let hi_z = pa[1].max(pb[1]).max(pc[1]);
        let range = |lo: f64, hi: f64, o: f64| {
            let first = ((lo - o) / h - 0.5).ceil().max(0.0) as usize;
            let last = ((hi - o) / h - 0.5).floor();
            if last < 0.0 {
                return 0..0;
            }
            first..(last as usize + 1).min(n)
        };
        for k in range(lo_z, hi_z, o[2]) {
            let zc = o[2] + (k as f64 + 0.5) * h;
            for j in range(lo_y, hi_y, o[1]) {
                let p = [o[1] + (j as f64 + 0.5) * h, zc];
                let w = [edge(pb, pc, p), edge(pc, pa, p), edge(pa, pb, p)];
                let sum = w[0] + w[1] + w[2];
                if sum == 0.0 {
                    continue;
                }
                let s = sum.signum();
                let dirs =
                    [[pc[0] - pb[0], pc[1] - pb[1]], [pa[0] - pc[0], pa[1] - pc[1]], [pb[0] - pa[0], pb[1] - pa[1]]];
                let covered = (0..3).all(|e| {
                    let we = s * w[e];
                    we > 0.0 || (we == 0.0 && tie_covers([s * dirs[e][0], s * dirs[e][1]]))
                });
                if covered {
                    let x = (w[0] * a[0] + w[1] * b[0] + w[2] * c[0]) / sum;
                    columns[j + n * k].push(x);
                }
            }
        }
    }

    for k in 0..n {
        for j in 0..n {
            let xs = &mut columns[j + n * k];
            if xs.is_empty() {
                continue;
            }
            xs.sort_by(f64::total_cmp);
            let mut next = 0;
            for i in 0..n {
                let xc = o[0] + (i as f64 + 0.5) * h;
                while next < xs.len() && xs[next] < xc {
                    next += 1;
                }
                let on_surface = next < xs.len() && xs[next] == xc;
                if next % 2 == 1 || on_surface {
                    let idx = grid.index(i, j, k);
                    grid.values[idx] = 1.0;
                }
            }
        }
    }
    Ok(grid)
}
