use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CoarseConfig;
use crate::error::{Error, Result};
use crate::geometry::{Camera, CubeBounds, LabeledPoint, Point3, TriMesh};
use crate::mlp::{mlp_forward, push_mlp};
use crate::tensor::{Activation, Graph, LayerKind, LayerParams, ParamSet, Real, Tensor, Var};

const KERNEL: usize = 4;

/// Calibrated views of one subject with its ground truth.
#[derive(Clone, Debug)]
pub struct MultiViewSample {
    /// `[3, H, W]` images in `[0, 1]`, background 0.
    pub images: Vec<Tensor<f32>>,
    pub cameras: Vec<Camera>,
    pub gt: TriMesh,
    /// Scene volume; depth features are normalized by it.
    pub bounds: CubeBounds,
}

impl MultiViewSample {
    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.images.is_empty() || self.images.len() != self.cameras.len() {
            return Err(Error::validity(format!(
                "sample needs matching non-empty images and cameras, got {} and {}",
                self.images.len(),
                self.cameras.len()
            )));
        }
        for img in &self.images {
            if img.shape() != [3, image_size, image_size] {
                return Err(Error::config(format!("image shape {:?} does not match extent {image_size}", img.shape())));
            }
        }
        Ok(())
    }
}

/// Per-stage feature grids `[C, E_j, E_j]` of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T: Real = f32> {
    pub stages: Vec<Tensor<T>>,
}

impl<T: Real> FeaturePyramid<T> {
    /// `(channels, height, width)` of each stage.
    pub fn extents(&self) -> Vec<(usize, usize, usize)> {
        self.stages.iter().map(|t| (t.shape()[0], t.shape()[1], t.shape()[2])).collect()
    }
}

/// Fused and per-view occupancy of one point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointQuery {
    pub fused: f64,
    /// `None` where the point does not project into that view.
    pub per_view: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    stem: usize,
    /// down1, down2, up1, up2 per stage.
    stages: Vec<[usize; 4]>,
    mlp: Vec<usize>,
}

/// Hourglass feature extractor plus pixel-aligned occupancy MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseNet<T: Real = f32> {
    pub config: CoarseConfig,
    pub params: ParamSet<T>,
    layout: Layout,
}

impl CoarseNet<f32> {
    /// Randomly initialized network.
    pub fn new(config: &CoarseConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = config.channels;
        let conv = |kind, i, o, rng: &mut ChaCha8Rng| LayerParams::init(kind, i, o, KERNEL, 2, 1, rng);
        let stem = params.push(conv(LayerKind::Conv2d, 3, c, &mut rng)?);
        let mut stages = Vec::with_capacity(config.stages);
        for _ in 0..config.stages {
            stages.push([
                params.push(conv(LayerKind::Conv2d, c, c, &mut rng)?),
                params.push(conv(LayerKind::Conv2d, c, c, &mut rng)?),
                params.push(conv(LayerKind::TConv2d, c, c, &mut rng)?),
                params.push(conv(LayerKind::TConv2d, c, c, &mut rng)?),
            ]);
        }
        let mlp = push_mlp(&mut params, config.query_width(), &config.mlp_widths, &mut rng)?;
        Ok(CoarseNet { config: config.clone(), params, layout: Layout { stem, stages, mlp } })
    }
}

impl<T: Real> CoarseNet<T> {
    pub fn cast<U: Real>(&self) -> CoarseNet<U> {
        CoarseNet { config: self.config.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    /// Width of the first MLP layer's input.
    pub fn query_width(&self) -> usize {
        self.params.layer(self.layout.mlp[0]).in_channels()
    }

    /// Records the hourglass stack for one `[3, H, W]` image.
    pub fn pyramid_graph(&self, g: &mut Graph<T>, image: Var) -> Result<Vec<Var>> {
        let s = self.config.image_size;
        if g.shape(image) != [3, s, s] {
            return Err(Error::config(format!("image shape {:?} does not match extent {s}", g.shape(image))));
        }
        let p = |i: usize| self.params.layer(i);
        let leaky = Activation::LeakyRelu;
        let mut x = g.conv2d(image, p(self.layout.stem))?;
        x = g.act(x, leaky)?;
        let mut out = Vec::with_capacity(self.layout.stages.len());
        for (j, st) in self.layout.stages.iter().enumerate() {
            if j > 0 {
                x = g.max_pool(x, 2, 2)?;
            }
            let d1 = g.conv2d(x, p(st[0]))?;
            let d1 = g.act(d1, leaky)?;
            let d2 = g.conv2d(d1, p(st[1]))?;
            let d2 = g.act(d2, leaky)?;
            let u1 = g.tconv2d(d2, p(st[2]))?;
            let u1 = g.act(u1, leaky)?;
            let u2 = g.tconv2d(u1, p(st[3]))?;
            let sum = g.add(u2, x)?;
            x = g.act(sum, leaky)?;
            out.push(x);
        }
        Ok(out)
    }

    /// Feature pyramid of one image.
    pub fn hourglass_forward(&self, image: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let vars = self.pyramid_graph(&mut g, x)?;
        Ok(FeaturePyramid { stages: vars.iter().map(|&v| g.value(v).clone()).collect() })
    }

    /// Query vectors of `points` seen from one camera, as `[P, M·C+1]`.
    /// Points that do not project are skipped; their indices are omitted
    /// from the returned list.
    pub fn query_features(
        &self,
        g: &mut Graph<T>,
        pyramid: &[Var],
        camera: &Camera,
        points: &[Point3],
        bounds: &CubeBounds,
    ) -> Result<Option<(Var, Vec<usize>)>> {
        let z0 = camera.to_camera_frame(bounds.center())[2];
        let scale = bounds.half_extent();
        let mut pix = Vec::with_capacity(points.len());
        let mut depth = Vec::with_capacity(points.len());
        let mut kept = Vec::with_capacity(points.len());
        for (i, &p) in points.iter().enumerate() {
            if let Ok((px, z)) = camera.project(p) {
                pix.push(px);
                depth.push(T::c((z - z0) / scale));
                kept.push(i);
            }
        }
        if kept.is_empty() {
            return Ok(None);
        }
        let (w, h) = (camera.width as f64, camera.height as f64);
        let mut cols = Vec::with_capacity(pyramid.len() + 1);
        for &stage in pyramid {
            let (eh, ew) = (g.shape(stage)[1] as f64, g.shape(stage)[2] as f64);
            let coords: Vec<[f64; 2]> = pix.iter().map(|&[u, v]| [u * ew / w - 0.5, v * eh / h - 0.5]).collect();
            cols.push(g.sample_bilinear(stage, &coords)?);
        }
        let n = kept.len();
        cols.push(g.input(Tensor::from_vec(&[n, 1], depth)?));
        let x = g.concat_cols(&cols)?;
        if g.shape(x)[1] != self.query_width() {
            return Err(Error::config(format!(
                "query vector has {} entries, MLP expects {}",
                g.shape(x)[1],
                self.query_width()
            )));
        }
        Ok(Some((x, kept)))
    }

    /// Per-view probabilities `[P', 1]` for the points that project.
    pub fn view_predictions(
        &self,
        g: &mut Graph<T>,
        pyramid: &[Var],
        camera: &Camera,
        points: &[Point3],
        bounds: &CubeBounds,
    ) -> Result<Option<(Var, Vec<usize>)>> {
        match self.query_features(g, pyramid, camera, points, bounds)? {
            Some((x, kept)) => Ok(Some((mlp_forward(g, x, &self.params, &self.layout.mlp)?, kept))),
            None => Ok(None),
        }
    }

    /// Per-view probabilities for many points; `None` marks non-projecting pairs.
    pub fn query_views(
        &self,
        pyramids: &[FeaturePyramid<T>],
        cameras: &[Camera],
        points: &[Point3],
        bounds: &CubeBounds,
    ) -> Result<Vec<Vec<Option<f64>>>> {
        if pyramids.is_empty() || pyramids.len() != cameras.len() {
            return Err(Error::query(format!("{} pyramids for {} cameras", pyramids.len(), cameras.len())));
        }
        let mut out = vec![vec![None; pyramids.len()]; points.len()];
        for (v, (pyr, cam)) in pyramids.iter().zip(cameras).enumerate() {
            let mut g = Graph::new();
            let vars: Vec<Var> = pyr.stages.iter().map(|t| g.input(t.clone())).collect();
            if let Some((pred, kept)) = self.view_predictions(&mut g, &vars, cam, points, bounds)? {
                for (&i, &p) in kept.iter().zip(g.value(pred).data()) {
                    out[i][v] = Some(p.f64());
                }
            }
        }
        Ok(out)
    }

    /// Mean of the per-view probabilities of each point.
    pub fn query_points(
        &self,
        pyramids: &[FeaturePyramid<T>],
        cameras: &[Camera],
        points: &[Point3],
        bounds: &CubeBounds,
    ) -> Result<Vec<f64>> {
        self.query_views(pyramids, cameras, points, bounds)?.into_iter().map(|pv| fuse(&pv)).collect()
    }

    /// Occupancy of a single point from every view.
    pub fn query_point(
        &self,
        pyramids: &[FeaturePyramid<T>],
        cameras: &[Camera],
        point: Point3,
        bounds: &CubeBounds,
    ) -> Result<PointQuery> {
        let per_view = self.query_views(pyramids, cameras, &[point], bounds)?.remove(0);
        Ok(PointQuery { fused: fuse(&per_view)?, per_view })
    }

    /// Records the training loss for a batch of samples: mean squared error of
    /// every per-view prediction against its label.
    pub fn loss_graph(&self, g: &mut Graph<T>, batch: &[(&MultiViewSample, &[LabeledPoint])]) -> Result<Var> {
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        for &(sample, points) in batch {
            if points.is_empty() {
                return Err(Error::usage("coarse loss needs at least one labeled point"));
            }
            sample.validate(self.config.image_size)?;
            let pos: Vec<Point3> = points.iter().map(|p| p.position).collect();
            for (img, cam) in sample.images.iter().zip(&sample.cameras) {
                let x = g.input(img.cast());
                let pyr = self.pyramid_graph(g, x)?;
                if let Some((pred, kept)) = self.view_predictions(g, &pyr, cam, &pos, &sample.bounds)? {
                    preds.push(pred);
                    targets.extend(kept.iter().map(|&i| T::c(points[i].label as f64)));
                }
            }
        }
        if preds.is_empty() {
            return Err(Error::query("no training point projects into any view"));
        }
        let all = g.concat_rows(&preds)?;
        g.mse(all, &targets)
    }

    /// Training loss of one sample.
    pub fn coarse_loss(&self, sample: &MultiViewSample, points: &[LabeledPoint]) -> Result<f64> {
        let mut g = Graph::new();
        let loss = self.loss_graph(&mut g, &[(sample, points)])?;
        Ok(g.value(loss).data()[0].f64())
    }
}

fn fuse(per_view: &[Option<f64>]) -> Result<f64> {
    let seen: Vec<f64> = per_view.iter().flatten().copied().collect();
    if seen.is_empty() {
        return Err(Error::query("point does not project into any view"));
    }
    Ok(seen.iter().sum::<f64>() / seen.len() as f64)
}
