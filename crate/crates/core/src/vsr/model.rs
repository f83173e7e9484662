use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::VsrConfig;
use crate::error::{Error, Result};
use crate::geometry::{sample_displaced, LabeledPoint, Point3, SigmaSpec, TriMesh, VoxelGrid};
use crate::mlp::{mlp_forward, push_mlp};
use crate::tensor::{Activation, Graph, LayerKind, LayerParams, ParamSet, Real, Tensor, Var};

/// Per-stage feature grids `[C_k, E_k, E_k, E_k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelFeaturePyramid<T: Real = f32> {
    pub stages: Vec<Tensor<T>>,
}

impl<T: Real> VoxelFeaturePyramid<T> {
    /// `(channels, extent)` of each stage.
    pub fn extents(&self) -> Vec<(usize, usize)> {
        self.stages.iter().map(|t| (t.shape()[0], t.shape()[1])).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    convs: Vec<usize>,
    mlp: Vec<usize>,
}

/// 3D convolution pyramid over an occupancy grid plus an occupancy MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct VsrNet<T: Real = f32> {
    pub config: VsrConfig,
    pub params: ParamSet<T>,
    layout: Layout,
}

impl VsrNet<f32> {
    pub fn new(config: &VsrConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut convs = Vec::with_capacity(config.stages());
        let mut prev = 1;
        for &c in &config.channels {
            convs.push(params.push(LayerParams::init(LayerKind::Conv3d, prev, c, 3, 1, 1, &mut rng)?));
            prev = c;
        }
        let mlp = push_mlp(&mut params, config.query_width(), &config.mlp_widths, &mut rng)?;
        Ok(VsrNet { config: config.clone(), params, layout: Layout { convs, mlp } })
    }
}

/// Grid as a `[1, N, N, N]` tensor (x fastest).
pub fn grid_tensor<T: Real>(grid: &VoxelGrid) -> Tensor<T> {
    let n = grid.resolution;
    Tensor::from_vec(&[1, n, n, n], grid.values.iter().map(|&v| T::c(v as f64)).collect()).expect("cubic grid")
}

/// Gaussian-displaced points around the coarse surface, labelled against the
/// ground truth; the first half use `sigma_max`.
pub fn sample_vsr_points(
    coarse: &TriMesh,
    gt: &TriMesh,
    count: usize,
    sigma_max: f64,
    sigma_min: f64,
    seed: u64,
) -> Result<Vec<LabeledPoint>> {
    coarse.check_watertight()?;
    sample_displaced(coarse, gt, count, SigmaSpec::Pair { max: sigma_max, min: sigma_min }, seed)
}

impl<T: Real> VsrNet<T> {
    pub fn cast<U: Real>(&self) -> VsrNet<U> {
        VsrNet { config: self.config.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    pub fn query_width(&self) -> usize {
        self.params.layer(self.layout.mlp[0]).in_channels()
    }

    fn check_grid(&self, grid: &VoxelGrid) -> Result<()> {
        if grid.resolution != self.config.resolution {
            return Err(Error::config(format!(
                "grid resolution {} does not match the network's {}",
                grid.resolution, self.config.resolution
            )));
        }
        Ok(())
    }

    /// Records the stage stack on a `[1, N, N, N]` input.
    pub fn pyramid_graph(&self, g: &mut Graph<T>, input: Var) -> Result<Vec<Var>> {
        let mut x = input;
        let mut out = Vec::with_capacity(self.layout.convs.len());
        for (k, &slot) in self.layout.convs.iter().enumerate() {
            if k > 0 {
                x = g.max_pool(x, 2, 3)?;
            }
            let c = g.conv3d(x, self.params.layer(slot))?;
            x = g.act(c, Activation::LeakyRelu)?;
            out.push(x);
        }
        Ok(out)
    }

    pub fn extract_voxel_features(&self, grid: &VoxelGrid) -> Result<VoxelFeaturePyramid<T>> {
        self.check_grid(grid)?;
        let mut g = Graph::new();
        let x = g.input(grid_tensor(grid));
        let vars = self.pyramid_graph(&mut g, x)?;
        Ok(VoxelFeaturePyramid { stages: vars.iter().map(|&v| g.value(v).clone()).collect() })
    }

    /// Probabilities `[P, 1]`; each stage is sampled at the same normalized
    /// location, clamped at the grid boundary.
    pub fn predictions(&self, g: &mut Graph<T>, pyramid: &[Var], grid: &VoxelGrid, points: &[Point3]) -> Result<Var> {
        if points.is_empty() {
            return Err(Error::usage("VSR query with zero points"));
        }
        let unit: Vec<Point3> = points.iter().map(|&p| grid.world_to_unit(p)).collect();
        let mut cols = Vec::with_capacity(pyramid.len());
        for &stage in pyramid {
            let e = g.shape(stage)[1] as f64;
            let coords: Vec<[f64; 3]> = unit.iter().map(|u| std::array::from_fn(|a| u[a] * e - 0.5)).collect();
            cols.push(g.sample_trilinear(stage, &coords)?);
        }
        let x = g.concat_cols(&cols)?;
        if g.shape(x)[1] != self.query_width() {
            return Err(Error::config(format!(
                "feature vector has {} entries, MLP expects {}",
                g.shape(x)[1],
                self.query_width()
            )));
        }
        mlp_forward(g, x, &self.params, &self.layout.mlp)
    }

    pub fn query_points(
        &self,
        pyramid: &VoxelFeaturePyramid<T>,
        grid: &VoxelGrid,
        points: &[Point3],
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = pyramid.stages.iter().map(|t| g.input(t.clone())).collect();
        let p = self.predictions(&mut g, &vars, grid, points)?;
        Ok(g.value(p).data().iter().map(|v| v.f64()).collect())
    }

    pub fn query_voxel(&self, pyramid: &VoxelFeaturePyramid<T>, grid: &VoxelGrid, point: Point3) -> Result<f64> {
        Ok(self.query_points(pyramid, grid, &[point])?[0])
    }

    /// Mean binary cross-entropy over a batch of (input grid, points) pairs.
    pub fn loss_graph(&self, g: &mut Graph<T>, batch: &[(&VoxelGrid, &[LabeledPoint])]) -> Result<Var> {
        let mut preds = Vec::with_capacity(batch.len());
        let mut targets = Vec::new();
        for &(grid, points) in batch {
            if points.is_empty() {
                return Err(Error::usage("VSR loss needs at least one labeled point"));
            }
            self.check_grid(grid)?;
            let x = g.input(grid_tensor(grid));
            let pyr = self.pyramid_graph(g, x)?;
            let pos: Vec<Point3> = points.iter().map(|p| p.position).collect();
            preds.push(self.predictions(g, &pyr, grid, &pos)?);
            targets.extend(points.iter().map(|p| T::c(p.label as f64)));
        }
        if preds.is_empty() {
            return Err(Error::usage("VSR loss over an empty batch"));
        }
        let all = g.concat_rows(&preds)?;
        g.bce(all, &targets)
    }

    pub fn vsr_loss(&self, points: &[LabeledPoint], grid: &VoxelGrid) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.loss_graph(&mut g, &[(grid, points)])?;
        Ok(g.value(l).data()[0].f64())
    }
}
