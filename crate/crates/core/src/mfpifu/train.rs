use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CoarseConfig, CoarseNet, MultiViewSample};
use crate::error::{Error, Result};
use crate::geometry::{
    marching_cubes, sample_training_points, InsideTester, LabeledPoint, SigmaSpec, TriMesh, VoxelGrid,
};
use crate::geometry::{Camera, CubeBounds};
use crate::parallel::{try_map_indexed, worker_count};
use crate::tensor::{Algorithm, Graph, OptimizerState, Tensor};

/// One line of training progress.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Labeled points for one sample: Gaussian-displaced surface points plus a
/// uniform share over the scene volume.
pub fn coarse_training_points(sample: &MultiViewSample, config: &CoarseConfig, seed: u64) -> Result<Vec<LabeledPoint>> {
    let uniform = (config.point_count as f64 * config.uniform_fraction).round() as usize;
    let near = config.point_count - uniform;
    let mut points = if near > 0 {
        sample_training_points(&sample.gt, near, SigmaSpec::Single(config.sigma), seed)?
    } else {
        Vec::new()
    };
    if uniform > 0 {
        let tester = InsideTester::new(&sample.gt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x756e_6966);
        let (lo, size) = (sample.bounds.min, sample.bounds.size);
        for _ in 0..uniform {
            let p = std::array::from_fn(|a| lo[a] + size * rng.random::<f64>());
            points.push(LabeledPoint { position: p, label: tester.label(p) });
        }
    }
    Ok(points)
}

/// Trains a fresh network with RMSProp; returns it with the per-epoch mean
/// loss. `log` sees every epoch as it finishes.
pub fn train_coarse(
    data: &[MultiViewSample],
    config: &CoarseConfig,
    seed: u64,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<(CoarseNet, Vec<f64>)> {
    let mut net = CoarseNet::new(config, seed)?;
    let trace = continue_coarse(&mut net, data, seed, log)?;
    Ok((net, trace))
}

/// Trains `net` in place with its own config's schedule.
pub fn continue_coarse(
    net: &mut CoarseNet,
    data: &[MultiViewSample],
    seed: u64,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<f64>> {
    let config = net.config.clone();
    config.validate()?;
    if data.is_empty() {
        return Err(Error::usage("coarse training needs at least one sample"));
    }
    for s in data {
        s.validate(config.image_size)?;
    }
    let mut opt = OptimizerState::new(Algorithm::RmsProp, config.lr, config.lr_decay, config.decay_epoch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f_6172_7365);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        opt.begin_epoch(epoch);
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch) {
            let points = chunk
                .iter()
                .map(|&i| coarse_training_points(&data[i], &config, rng.next_u64()))
                .collect::<Result<Vec<_>>>()?;
            let batch: Vec<(&MultiViewSample, &[LabeledPoint])> =
                chunk.iter().zip(&points).map(|(&i, p)| (&data[i], p.as_slice())).collect();
            let mut g = Graph::new();
            let loss = net.loss_graph(&mut g, &batch).map_err(|e| diverged(epoch, e))?;
            g.backward(loss).map_err(|e| diverged(epoch, e))?;
            g.accumulate_into(&mut net.params);
            opt.step(&mut net.params)?;
            sum += g.value(loss).data()[0] as f64;
            batches += 1;
        }
        let loss = sum / batches as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("mean loss {loss}") });
        }
        trace.push(loss);
        log(&EpochLog { epoch, loss, lr: opt.learning_rate(), seconds: start.elapsed().as_secs_f64() });
    }
    Ok(trace)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged { epoch, detail: format!("non-finite value in {what}") },
        other => other,
    }
}

/// Evaluates the fused occupancy at every voxel center of a `resolution³`
/// lattice over `bounds` and extracts the 0.5 iso-surface.
pub fn reconstruct_coarse(
    net: &CoarseNet,
    images: &[Tensor<f32>],
    cameras: &[Camera],
    resolution: usize,
    bounds: &CubeBounds,
) -> Result<(VoxelGrid, TriMesh)> {
    if images.is_empty() || images.len() != cameras.len() {
        return Err(Error::usage(format!("{} images for {} cameras", images.len(), cameras.len())));
    }
    let pyramids = images.iter().map(|img| net.hourglass_forward(img)).collect::<Result<Vec<_>>>()?;
    let mut grid = VoxelGrid::zeros(resolution, bounds)?;
    let slices = try_map_indexed(resolution, worker_count(), |k| -> Result<Vec<f32>> {
        let pts: Vec<_> =
            (0..resolution * resolution).map(|n| grid.center(n % resolution, n / resolution, k)).collect();
        Ok(net.query_points(&pyramids, cameras, &pts, bounds)?.into_iter().map(|p| p as f32).collect())
    })?;
    grid.values = slices.concat();
    let mesh = marching_cubes(&grid, 0.5);
    Ok((grid, mesh))
}
