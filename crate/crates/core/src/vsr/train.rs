use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sample_vsr_points, VsrConfig, VsrNet};
use crate::error::{Error, Result};
use crate::geometry::{marching_cubes, voxelize, CubeBounds, LabeledPoint, TriMesh, VoxelGrid};
use crate::mfpifu::EpochLog;
use crate::parallel::{try_map_indexed, worker_count};
use crate::tensor::{Algorithm, Graph, OptimizerState};

/// One training pair: the coarse surface, its voxelization and the truth.
#[derive(Clone, Debug)]
pub struct VsrSample {
    pub grid: VoxelGrid,
    pub coarse: TriMesh,
    pub gt: TriMesh,
}

impl VsrSample {
    /// Voxelizes `coarse` at `resolution` over `bounds`.
    pub fn new(coarse: TriMesh, gt: TriMesh, resolution: usize, bounds: &CubeBounds) -> Result<Self> {
        let grid = voxelize(&coarse, resolution, bounds)?;
        Ok(VsrSample { grid, coarse, gt })
    }
}

/// Trains a fresh network with Adam; returns it with the per-epoch mean loss.
pub fn train_vsr(
    data: &[VsrSample],
    config: &VsrConfig,
    seed: u64,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<(VsrNet, Vec<f64>)> {
    let mut net = VsrNet::new(config, seed)?;
    let trace = continue_vsr(&mut net, data, seed, log)?;
    Ok((net, trace))
}

pub fn continue_vsr(
    net: &mut VsrNet,
    data: &[VsrSample],
    seed: u64,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<f64>> {
    let config = net.config.clone();
    config.validate()?;
    if data.is_empty() {
        return Err(Error::usage("VSR training needs at least one sample"));
    }
    let mut opt = OptimizerState::new(Algorithm::Adam, config.lr, 1.0, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7673_725f_7472);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch) {
            let points = chunk
                .iter()
                .map(|&i| {
                    let s = &data[i];
                    sample_vsr_points(
                        &s.coarse,
                        &s.gt,
                        config.point_count,
                        config.sigma_max,
                        config.sigma_min,
                        rng.next_u64(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let batch: Vec<(&VoxelGrid, &[LabeledPoint])> =
                chunk.iter().zip(&points).map(|(&i, p)| (&data[i].grid, p.as_slice())).collect();
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

/// Occupancy probabilities of `net` at every voxel center of an
/// `output_resolution³` lattice over the input grid's bounds.
pub fn refine_grid(net: &VsrNet, input: &VoxelGrid, output_resolution: usize) -> Result<VoxelGrid> {
    let pyramid = net.extract_voxel_features(input)?;
    let mut out = VoxelGrid::zeros(output_resolution, &input.bounds())?;
    let n = output_resolution;
    let slices = try_map_indexed(n, worker_count(), |k| -> Result<Vec<f32>> {
        let pts: Vec<_> = (0..n * n).map(|i| out.center(i % n, i / n, k)).collect();
        Ok(net.query_points(&pyramid, input, &pts)?.into_iter().map(|p| p as f32).collect())
    })?;
    out.values = slices.concat();
    Ok(out)
}

/// Voxelizes the coarse mesh at the network's input resolution, predicts a
/// denser occupancy field and extracts its 0.5 iso-surface.
pub fn refine(
    net: &VsrNet,
    coarse: &TriMesh,
    output_resolution: usize,
    bounds: &CubeBounds,
) -> Result<(VoxelGrid, TriMesh)> {
    let input = voxelize(coarse, net.config.resolution, bounds)?;
    let grid = refine_grid(net, &input, output_resolution)?;
    let mesh = marching_cubes(&grid, 0.5);
    Ok((grid, mesh))
}
