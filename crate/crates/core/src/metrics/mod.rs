//! Surface and volume agreement between a predicted and a ground-truth shape.

mod kdtree;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use kdtree::{dist2, KdTree};

use crate::error::{Error, Result};
use crate::geometry::{sample_surface, voxelize, Bvh, CubeBounds, Point3, TriMesh, VoxelGrid};
use crate::tensor::fnv1a64;

pub const DEFAULT_SAMPLE_COUNT: usize = 10_000;
pub const DEFAULT_IOU_RESOLUTION: usize = 64;

/// Seed offset separating the reverse-direction sample stream.
const GT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Sample seed depending only on the mesh and the caller's seed, so swapping
/// arguments reproduces the same point sets.
fn mesh_seed(mesh: &TriMesh, seed: u64) -> u64 {
    let mut bytes = Vec::with_capacity(mesh.vertices.len() * 24 + mesh.triangles.len() * 12 + 8);
    bytes.extend_from_slice(&seed.to_le_bytes());
    for v in mesh.vertices.iter().flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for i in mesh.triangles.iter().flatten() {
        bytes.extend_from_slice(&i.to_le_bytes());
    }
    fnv1a64(&bytes)
}

fn check_sampleable(mesh: &TriMesh, what: &str) -> Result<()> {
    if mesh.is_empty() {
        return Err(Error::validity(format!("{what} mesh is empty")));
    }
    Ok(())
}

/// Mean distance (cm) from area-uniform samples on `pred` to the surface of `gt`.
pub fn p2s(pred: &TriMesh, gt: &TriMesh, sample_count: usize, seed: u64) -> Result<f64> {
    check_sampleable(pred, "predicted")?;
    gt.check_watertight()?;
    if sample_count == 0 {
        return Err(Error::config("sample count must be positive"));
    }
    let pts = sample_surface(pred, sample_count, seed)?;
    let bvh = Bvh::new(gt);
    Ok(pts.iter().map(|&p| bvh.distance(p)).sum::<f64>() / pts.len() as f64)
}

/// Average of both P2S directions.
pub fn p2s_symmetric(pred: &TriMesh, gt: &TriMesh, sample_count: usize, seed: u64) -> Result<f64> {
    Ok(0.5 * (p2s(pred, gt, sample_count, seed)? + p2s(gt, pred, sample_count, seed ^ GT_STREAM)?))
}

/// Symmetric mean of squared nearest-neighbour distances between point sets.
pub fn chamfer_points(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::usage("chamfer distance needs two non-empty point sets"));
    }
    let one_way = |from: &[Point3], to: &[Point3]| {
        let tree = KdTree::new(to);
        from.iter().map(|&p| tree.nearest_dist2(p)).sum::<f64>() / from.len() as f64
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)))
}

/// The two point sets Chamfer-L2 compares. Each surface's samples depend
/// only on that mesh and `seed`.
pub fn chamfer_samples(
    pred: &TriMesh,
    gt: &TriMesh,
    sample_count: usize,
    seed: u64,
) -> Result<(Vec<Point3>, Vec<Point3>)> {
    check_sampleable(pred, "predicted")?;
    check_sampleable(gt, "ground-truth")?;
    if sample_count == 0 {
        return Err(Error::config("sample count must be positive"));
    }
    Ok((
        sample_surface(pred, sample_count, mesh_seed(pred, seed))?,
        sample_surface(gt, sample_count, mesh_seed(gt, seed))?,
    ))
}

/// Chamfer-L2 (cm²) between area-uniform samples on both surfaces.
pub fn chamfer_l2(pred: &TriMesh, gt: &TriMesh, sample_count: usize, seed: u64) -> Result<f64> {
    let (a, b) = chamfer_samples(pred, gt, sample_count, seed)?;
    chamfer_points(&a, &b)
}

/// Either side of an IoU comparison.
#[derive(Clone, Copy, Debug)]
pub enum Solid<'a> {
    Mesh(&'a TriMesh),
    Grid(&'a VoxelGrid),
}

impl<'a> From<&'a TriMesh> for Solid<'a> {
    fn from(m: &'a TriMesh) -> Self {
        Solid::Mesh(m)
    }
}

impl<'a> From<&'a VoxelGrid> for Solid<'a> {
    fn from(g: &'a VoxelGrid) -> Self {
        Solid::Grid(g)
    }
}

fn occupancy(s: Solid, resolution: usize, bounds: &CubeBounds) -> Result<Vec<bool>> {
    let grid = match s {
        Solid::Mesh(m) if m.is_empty() => VoxelGrid::zeros(resolution, bounds)?,
        Solid::Mesh(m) => voxelize(m, resolution, bounds)?,
        Solid::Grid(g) => {
            let gb = g.bounds();
            let tol = 1e-6 * bounds.size;
            let same = g.resolution == resolution
                && (gb.size - bounds.size).abs() <= tol
                && (0..3).all(|a| (gb.min[a] - bounds.min[a]).abs() <= tol);
            if !same {
                return Err(Error::validity(format!(
                    "grid {}³ over {gb:?} does not match IoU lattice {resolution}³ over {bounds:?}",
                    g.resolution
                )));
            }
            return Ok(g.values.iter().map(|&v| v >= 0.5).collect());
        }
    };
    Ok(grid.values.iter().map(|&v| v >= 0.5).collect())
}

/// Volumetric intersection over union on a shared lattice; two empty shapes score 1.
pub fn iou<'a, 'b>(
    a: impl Into<Solid<'a>>,
    b: impl Into<Solid<'b>>,
    resolution: usize,
    bounds: &CubeBounds,
) -> Result<f64> {
    let a = occupancy(a.into(), resolution, bounds)?;
    let b = occupancy(b.into(), resolution, bounds)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(&b) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Per-vertex exact distances from `pred` to the surface of `gt`.
pub fn vertex_distances(pred: &TriMesh, gt: &TriMesh) -> Vec<f64> {
    let bvh = Bvh::new(gt);
    pred.vertices.iter().map(|&v| bvh.distance(v)).collect()
}

/// Blue (0) → red (1) ramp.
pub fn heat_color(t: f64) -> [f64; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 1.0 };
    [t, 0.0, 1.0 - t]
}

/// Writes `pred` as OBJ with per-vertex colors encoding the distance to `gt`
/// on a blue→red ramp over `[0, max distance]`. Returns the max distance.
pub fn error_heatmap_export(pred: &TriMesh, gt: &TriMesh, path: &Path) -> Result<f64> {
    check_sampleable(gt, "ground-truth")?;
    let d = vertex_distances(pred, gt);
    let max = d.iter().copied().fold(0.0, f64::max);
    let colors: Vec<[f64; 3]> = d.iter().map(|&x| heat_color(if max > 0.0 { x / max } else { 0.0 })).collect();
    let mut text = format!("# max_distance_cm {max:?}\n");
    text.push_str(&pred.obj_text(Some(&colors)));
    fs::write(path, text)?;
    Ok(max)
}

/// One evaluation row.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub sample_id: String,
    pub p2s_cm: f64,
    pub chamfer_l2: f64,
    pub iou: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "sample_id,p2s_cm,chamfer_l2,iou";

    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6}", self.sample_id, self.p2s_cm, self.chamfer_l2, self.iou)
    }

    pub fn to_csv(reports: &[EvalReport]) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in reports {
            let _ = writeln!(s, "{}", r.csv_row());
        }
        s
    }
}

/// Evaluation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig {
    pub sample_count: usize,
    pub iou_resolution: usize,
    pub symmetric_p2s: bool,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            sample_count: DEFAULT_SAMPLE_COUNT,
            iou_resolution: DEFAULT_IOU_RESOLUTION,
            symmetric_p2s: false,
            seed: 0,
        }
    }
}

/// All three metrics for one prediction. An empty prediction scores P2S and
/// Chamfer as infinite and IoU as computed.
pub fn evaluate(
    sample_id: &str,
    pred: &TriMesh,
    gt: &TriMesh,
    bounds: &CubeBounds,
    cfg: &MetricConfig,
) -> Result<EvalReport> {
    let iou = iou(pred, gt, cfg.iou_resolution, bounds)?;
    let (p2s_cm, chamfer_l2) = if pred.is_empty() {
        (f64::INFINITY, f64::INFINITY)
    } else if cfg.symmetric_p2s {
        (p2s_symmetric(pred, gt, cfg.sample_count, cfg.seed)?, chamfer_l2(pred, gt, cfg.sample_count, cfg.seed)?)
    } else {
        (p2s(pred, gt, cfg.sample_count, cfg.seed)?, chamfer_l2(pred, gt, cfg.sample_count, cfg.seed)?)
    };
    Ok(EvalReport { sample_id: sample_id.to_string(), p2s_cm, chamfer_l2, iou })
}
