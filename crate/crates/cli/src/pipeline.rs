//! Stage functions shared by the subcommands and the end-to-end pipeline.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use occufield::datagen::{build_dataset, view_subset, DatasetManifest, Sample, SampleRecord, Split, MANIFEST_FILE};
use occufield::geometry::{marching_cubes, CubeBounds, TriMesh, VoxelGrid};
use occufield::kv::KvDoc;
use occufield::metrics::{evaluate, EvalReport, MetricConfig};
use occufield::mfpifu::{reconstruct_coarse, train_coarse, CoarseConfig, CoarseNet, EpochLog, MultiViewSample};
use occufield::parallel::{try_map_indexed, worker_count};
use occufield::tensor::{load_checkpoint, save_checkpoint};
use occufield::vsr::{refine, train_vsr, VsrConfig, VsrNet, VsrSample};

use crate::config::{CoarseSource, RunConfig, StopAfter};
use crate::error::{CliError, Result, StageExt};

pub const COARSE_CKPT: &str = "coarse.ckpt";
pub const COARSE_CFG: &str = "coarse.cfg";
pub const VSR_CKPT: &str = "vsr.ckpt";
pub const VSR_CFG: &str = "vsr.cfg";
pub const COARSE_CSV: &str = "coarse.csv";
pub const REFINED_CSV: &str = "refined.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";

/// Progress sink; receives one structured line per event.
pub type Log<'a> = &'a mut dyn FnMut(&str);

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(occufield::Error::from)?;
    }
    fs::write(path, text).map_err(occufield::Error::from)?;
    Ok(())
}

pub(crate) fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} does not exist: {}", path.display())))
    }
}

fn epoch_line(stage: &str, e: &EpochLog) -> String {
    format!("stage={stage} epoch={} loss={:.6} lr={:e} seconds={:.2}", e.epoch + 1, e.loss, e.lr, e.seconds)
}

fn loss_csv(trace: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(s, "{},{l:.8}", i + 1);
    }
    s
}

/// Loads the dataset at `cfg.dataset_dir`, generating it first if absent.
pub fn ensure_dataset(cfg: &RunConfig, log: Log) -> Result<DatasetManifest> {
    let dir = &cfg.dataset_dir;
    if !dir.join(MANIFEST_FILE).exists() {
        log(&format!("stage=gen-data samples={} dir={}", cfg.data.count, dir.display()));
        build_dataset(&cfg.data, dir).stage("gen-data")?;
    }
    let m = DatasetManifest::load(dir).stage("gen-data")?;
    check_dataset(cfg, &m)?;
    Ok(m)
}

/// The dataset must have been rendered for this config's cameras and volume.
pub fn check_dataset(cfg: &RunConfig, m: &DatasetManifest) -> Result<()> {
    let bounds = cfg.data.bounds();
    if m.image_size != cfg.coarse.image_size {
        return Err(CliError::Config(format!(
            "dataset images are {0}² but coarse.image_size = {1}",
            m.image_size, cfg.coarse.image_size
        )));
    }
    if !m.views.is_multiple_of(cfg.coarse.views) {
        return Err(CliError::Config(format!(
            "coarse.views = {} does not divide the dataset's {} views",
            cfg.coarse.views, m.views
        )));
    }
    if (m.bounds.size - bounds.size).abs() > 1e-9 || (0..3).any(|a| (m.bounds.min[a] - bounds.min[a]).abs() > 1e-9) {
        return Err(CliError::Config(format!(
            "dataset volume {:?} differs from data.half_extent = {}",
            m.bounds, cfg.data.half_extent
        )));
    }
    Ok(())
}

/// One sample's views reduced to `views` evenly spaced cameras.
pub fn multi_view(manifest: &DatasetManifest, sample: &Sample, views: usize) -> Result<MultiViewSample> {
    let idx = view_subset(manifest.views, views).stage("load")?;
    Ok(MultiViewSample {
        images: idx.iter().map(|&i| sample.images[i].to_tensor()).collect(),
        cameras: idx.iter().map(|&i| sample.cameras[i].clone()).collect(),
        gt: sample.gt.clone(),
        bounds: manifest.bounds,
    })
}

pub fn load_samples<'a>(
    manifest: &DatasetManifest,
    records: impl IntoIterator<Item = &'a SampleRecord>,
) -> Result<Vec<Sample>> {
    records.into_iter().map(|r| manifest.load_sample(r).stage("load")).collect()
}

pub fn train_coarse_stage(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    model_dir: &Path,
    log: Log,
) -> Result<CoarseNet> {
    let samples = load_samples(manifest, manifest.split(Split::Train))?;
    if samples.is_empty() {
        return Err(CliError::Precondition("coarse training needs at least one training sample".into()));
    }
    let data = samples.iter().map(|s| multi_view(manifest, s, cfg.coarse.views)).collect::<Result<Vec<_>>>()?;
    let (net, trace) = train_coarse(&data, &cfg.coarse, cfg.seed, &mut |e| log(&epoch_line("train-coarse", e)))
        .stage("train-coarse")?;
    fs::create_dir_all(model_dir).map_err(occufield::Error::from)?;
    save_checkpoint(&net.params, cfg.coarse.arch_hash(), &model_dir.join(COARSE_CKPT)).stage("train-coarse")?;
    write(&model_dir.join(COARSE_CFG), &cfg.coarse_model_text())?;
    write(&model_dir.join("coarse_loss.csv"), &loss_csv(&trace))?;
    Ok(net)
}

fn read_model_cfg(model_dir: &Path, file: &str, ckpt: &str, what: &str) -> Result<KvDoc> {
    for f in [ckpt, file] {
        if !model_dir.join(f).exists() {
            return Err(CliError::Precondition(format!(
                "{what} requires a trained model: {} not found",
                model_dir.join(f).display()
            )));
        }
    }
    let text = fs::read_to_string(model_dir.join(file)).map_err(occufield::Error::from)?;
    KvDoc::parse(&text).map_err(|e| CliError::Config(e.to_string()))
}

pub fn load_coarse(model_dir: &Path) -> Result<CoarseNet> {
    let doc = read_model_cfg(model_dir, COARSE_CFG, COARSE_CKPT, "coarse reconstruction")?;
    let config =
        CoarseConfig::read_kv(&doc, "coarse", &CoarseConfig::desk()).map_err(|e| CliError::Config(e.to_string()))?;
    let mut net = CoarseNet::new(&config, 0).stage("load-model")?;
    load_checkpoint(&mut net.params, config.arch_hash(), &model_dir.join(COARSE_CKPT)).stage("load-model")?;
    Ok(net)
}

pub fn load_vsr(model_dir: &Path) -> Result<VsrNet> {
    let doc = read_model_cfg(model_dir, VSR_CFG, VSR_CKPT, "refinement")?;
    let config = VsrConfig::read_kv(&doc, "vsr", &VsrConfig::desk()).map_err(|e| CliError::Config(e.to_string()))?;
    let mut net = VsrNet::new(&config, 0).stage("load-model")?;
    load_checkpoint(&mut net.params, config.arch_hash(), &model_dir.join(VSR_CKPT)).stage("load-model")?;
    Ok(net)
}

/// Coarse reconstruction with the scene border cleared, so the surface is
/// closed strictly inside the volume.
pub fn reconstruct_sample(net: &CoarseNet, mv: &MultiViewSample, resolution: usize) -> Result<(VoxelGrid, TriMesh)> {
    let (mut grid, _) =
        reconstruct_coarse(net, &mv.images, &mv.cameras, resolution, &mv.bounds).stage("reconstruct")?;
    let n = resolution;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if [i, j, k].iter().any(|&c| c == 0 || c == n - 1) {
                    let idx = grid.index(i, j, k);
                    grid.values[idx] = 0.0;
                }
            }
        }
    }
    let mesh = marching_cubes(&grid, 0.5);
    Ok((grid, mesh))
}

/// Coarse meshes keyed by sample id, in manifest order.
pub type Meshes = Vec<(String, TriMesh)>;

pub fn reconstruct_stage(
    cfg: &RunConfig,
    net: &CoarseNet,
    manifest: &DatasetManifest,
    records: &[&SampleRecord],
    out_dir: &Path,
    log: Log,
) -> Result<Meshes> {
    fs::create_dir_all(out_dir).map_err(occufield::Error::from)?;
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let t = std::time::Instant::now();
        let sample = manifest.load_sample(rec).stage("reconstruct")?;
        let mv = multi_view(manifest, &sample, net.config.views)?;
        let (grid, mesh) = reconstruct_sample(net, &mv, cfg.pipeline.coarse_resolution)?;
        mesh.write_obj(&out_dir.join(format!("{}.obj", rec.id))).stage("reconstruct")?;
        grid.write(&out_dir.join(format!("{}.ovox", rec.id))).stage("reconstruct")?;
        log(&format!(
            "stage=reconstruct sample={} triangles={} seconds={:.2}",
            rec.id,
            mesh.triangles.len(),
            t.elapsed().as_secs_f64()
        ));
        out.push((rec.id.clone(), mesh));
    }
    Ok(out)
}

/// The dataset's corrupted meshes, copied under `out_dir`.
pub fn corrupted_stage(manifest: &DatasetManifest, records: &[&SampleRecord], out_dir: &Path) -> Result<Meshes> {
    fs::create_dir_all(out_dir).map_err(occufield::Error::from)?;
    records
        .iter()
        .map(|rec| {
            let mesh = TriMesh::read_obj(&manifest.root.join(&rec.coarse_mesh)).stage("load")?;
            mesh.write_obj(&out_dir.join(format!("{}.obj", rec.id))).stage("load")?;
            Ok((rec.id.clone(), mesh))
        })
        .collect()
}

fn gt_of(manifest: &DatasetManifest, id: &str) -> Result<TriMesh> {
    let rec = manifest
        .samples
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| CliError::Config(format!("sample `{id}` is not in the dataset")))?;
    TriMesh::read_obj(&manifest.root.join(&rec.gt_mesh)).stage("load")
}

pub fn train_vsr_stage(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    coarse: &Meshes,
    model_dir: &Path,
    log: Log,
) -> Result<VsrNet> {
    let mut data = Vec::with_capacity(coarse.len());
    for (id, mesh) in coarse {
        if mesh.is_empty() {
            log(&format!("stage=train-vsr skip={id} reason=empty-coarse-mesh"));
            continue;
        }
        data.push(
            VsrSample::new(mesh.clone(), gt_of(manifest, id)?, cfg.vsr.resolution, &manifest.bounds)
                .stage("voxelize")?,
        );
    }
    if data.is_empty() {
        return Err(CliError::Precondition("VSR training needs at least one non-empty coarse training mesh".into()));
    }
    let (net, trace) =
        train_vsr(&data, &cfg.vsr, cfg.seed, &mut |e| log(&epoch_line("train-vsr", e))).stage("train-vsr")?;
    fs::create_dir_all(model_dir).map_err(occufield::Error::from)?;
    save_checkpoint(&net.params, cfg.vsr.arch_hash(), &model_dir.join(VSR_CKPT)).stage("train-vsr")?;
    write(&model_dir.join(VSR_CFG), &cfg.vsr_model_text())?;
    write(&model_dir.join("vsr_loss.csv"), &loss_csv(&trace))?;
    Ok(net)
}

pub fn refine_stage(net: &VsrNet, coarse: &Meshes, bounds: &CubeBounds, out_dir: &Path, log: Log) -> Result<Meshes> {
    fs::create_dir_all(out_dir).map_err(occufield::Error::from)?;
    let res = net.config.effective_output_resolution();
    let mut out = Vec::with_capacity(coarse.len());
    for (id, mesh) in coarse {
        let t = std::time::Instant::now();
        let (grid, refined) = refine(net, mesh, res, bounds).stage("refine")?;
        refined.write_obj(&out_dir.join(format!("{id}.obj"))).stage("refine")?;
        grid.write(&out_dir.join(format!("{id}.ovox"))).stage("refine")?;
        log(&format!(
            "stage=refine sample={id} triangles={} seconds={:.2}",
            refined.triangles.len(),
            t.elapsed().as_secs_f64()
        ));
        out.push((id.clone(), refined));
    }
    Ok(out)
}

/// Metrics of every prediction against its ground truth, in input order.
pub fn evaluate_stage(manifest: &DatasetManifest, preds: &Meshes, metrics: &MetricConfig) -> Result<Vec<EvalReport>> {
    try_map_indexed(preds.len(), worker_count(), |i| -> Result<EvalReport> {
        let (id, pred) = &preds[i];
        let gt = gt_of(manifest, id)?;
        evaluate(id, pred, &gt, &manifest.bounds, metrics).stage("evaluate")
    })
}

/// Per-metric means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanMetrics {
    pub p2s_cm: f64,
    pub chamfer_l2: f64,
    pub iou: f64,
}

impl MeanMetrics {
    pub fn of(reports: &[EvalReport]) -> Self {
        let n = reports.len().max(1) as f64;
        MeanMetrics {
            p2s_cm: reports.iter().map(|r| r.p2s_cm).sum::<f64>() / n,
            chamfer_l2: reports.iter().map(|r| r.chamfer_l2).sum::<f64>() / n,
            iou: reports.iter().map(|r| r.iou).sum::<f64>() / n,
        }
    }
}

/// Coarse and (optionally) refined metrics for every held-out sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineReport {
    pub coarse: Vec<EvalReport>,
    pub refined: Option<Vec<EvalReport>>,
}

impl PipelineReport {
    /// Coarse vs refined means, one row per metric.
    pub fn comparison_csv(&self) -> String {
        let c = MeanMetrics::of(&self.coarse);
        let r = self.refined.as_deref().map(MeanMetrics::of);
        let mut s = String::from(if r.is_some() { "metric,coarse,refined\n" } else { "metric,coarse\n" });
        for (name, cv, rv) in [
            ("p2s_cm", c.p2s_cm, r.map(|m| m.p2s_cm)),
            ("chamfer_l2", c.chamfer_l2, r.map(|m| m.chamfer_l2)),
            ("iou", c.iou, r.map(|m| m.iou)),
        ] {
            match rv {
                Some(rv) => writeln!(s, "{name},{cv:.6},{rv:.6}"),
                None => writeln!(s, "{name},{cv:.6}"),
            }
            .expect("writing to a String");
        }
        s
    }

    /// Held-out samples whose refined IoU is higher and P2S lower than coarse.
    pub fn improved_fraction(&self) -> f64 {
        let Some(refined) = &self.refined else { return 0.0 };
        let better = self.coarse.iter().zip(refined).filter(|(c, r)| r.iou > c.iou && r.p2s_cm < c.p2s_cm).count();
        better as f64 / self.coarse.len().max(1) as f64
    }
}

/// Output of the coarse half, reusable across refinement variants.
#[derive(Clone, Debug)]
pub struct CoarseStage {
    pub train: Meshes,
    pub test: Meshes,
    pub reports: Vec<EvalReport>,
}

/// Dataset, coarse shapes for both splits (training shapes only when the
/// refinement stage will run) and coarse metrics, written under `out`.
pub fn run_coarse(cfg: &RunConfig, manifest: &DatasetManifest, out: &Path, log: Log) -> Result<CoarseStage> {
    let train: Vec<&SampleRecord> = manifest.split(Split::Train).collect();
    let test: Vec<&SampleRecord> = manifest.split(Split::Test).collect();
    if test.is_empty() {
        return Err(CliError::Precondition("the dataset has no held-out samples to evaluate".into()));
    }
    let need_train = cfg.pipeline.stop_after == StopAfter::Refined;
    let coarse_dir = out.join("coarse");
    let (train_meshes, test_meshes) = match cfg.pipeline.coarse_source {
        CoarseSource::Network => {
            let net = train_coarse_stage(cfg, manifest, &out.join("models"), log)?;
            let t =
                if need_train { reconstruct_stage(cfg, &net, manifest, &train, &coarse_dir, log)? } else { Vec::new() };
            (t, reconstruct_stage(cfg, &net, manifest, &test, &coarse_dir, log)?)
        }
        CoarseSource::Corrupted => {
            let t = if need_train { corrupted_stage(manifest, &train, &coarse_dir)? } else { Vec::new() };
            (t, corrupted_stage(manifest, &test, &coarse_dir)?)
        }
    };
    let reports = evaluate_stage(manifest, &test_meshes, &cfg.metrics)?;
    write(&out.join(COARSE_CSV), &EvalReport::to_csv(&reports))?;
    log(&format!(
        "stage=evaluate which=coarse samples={} mean_iou={:.6}",
        reports.len(),
        MeanMetrics::of(&reports).iou
    ));
    Ok(CoarseStage { train: train_meshes, test: test_meshes, reports })
}

/// VSR training, refinement and evaluation on top of a coarse stage.
pub fn run_refine(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    coarse: &CoarseStage,
    out: &Path,
    log: Log,
) -> Result<PipelineReport> {
    write(&out.join(COARSE_CSV), &EvalReport::to_csv(&coarse.reports))?;
    let net = train_vsr_stage(cfg, manifest, &coarse.train, &out.join("models"), log)?;
    let refined = refine_stage(&net, &coarse.test, &manifest.bounds, &out.join("refined"), log)?;
    let reports = evaluate_stage(manifest, &refined, &cfg.metrics)?;
    write(&out.join(REFINED_CSV), &EvalReport::to_csv(&reports))?;
    log(&format!(
        "stage=evaluate which=refined samples={} mean_iou={:.6}",
        reports.len(),
        MeanMetrics::of(&reports).iou
    ));
    let report = PipelineReport { coarse: coarse.reports.clone(), refined: Some(reports) };
    write(&out.join(COMPARISON_CSV), &report.comparison_csv())?;
    Ok(report)
}

/// gen-data (if absent) → coarse shapes → VSR → refine → evaluate, with
/// every artifact under `cfg.out_dir`.
pub fn run_pipeline(cfg: &RunConfig, log: Log) -> Result<PipelineReport> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    write(&out.join("run.cfg"), &cfg.to_text())?;
    let manifest = ensure_dataset(cfg, log)?;
    let coarse = run_coarse(cfg, &manifest, &out, log)?;
    if cfg.pipeline.stop_after == StopAfter::Coarse {
        let report = PipelineReport { coarse: coarse.reports, refined: None };
        write(&out.join(COMPARISON_CSV), &report.comparison_csv())?;
        return Ok(report);
    }
    run_refine(cfg, &manifest, &coarse, &out, log)
}

/// Axes a sweep may vary.
pub const SWEEP_PARAMS: [&str; 4] = ["vsr.sigma_max", "vsr.sigma_min", "vsr.resolution", "coarse.views"];

/// One value of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub report: PipelineReport,
}

pub fn sweep_dir(out: &Path, param: &str, value: &str) -> PathBuf {
    out.join(format!("{param}={value}"))
}

/// Runs the pipeline once per value of `param`. VSR axes share one coarse
/// stage. Writes `sweep.csv` with per-value means.
pub fn run_sweep(cfg: &RunConfig, param: &str, values: &[String], log: Log) -> Result<Vec<SweepPoint>> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(CliError::Usage(format!("cannot sweep `{param}`; expected one of {}", SWEEP_PARAMS.join(", "))));
    }
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    cfg.validate()?;
    let variants = values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set(param, v)?;
            c.out_dir = sweep_dir(&cfg.out_dir, param, v);
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = ensure_dataset(cfg, log)?;
    let shared = if param.starts_with("vsr.") {
        Some(run_coarse(cfg, &manifest, &cfg.out_dir.join("shared"), log)?)
    } else {
        None
    };
    let mut points = Vec::with_capacity(values.len());
    for (v, c) in values.iter().zip(&variants) {
        log(&format!("stage=sweep param={param} value={v}"));
        write(&c.out_dir.join("run.cfg"), &c.to_text())?;
        let report = match (&shared, c.pipeline.stop_after) {
            (Some(stage), StopAfter::Refined) => run_refine(c, &manifest, stage, &c.out_dir, log)?,
            _ => run_pipeline(c, log)?,
        };
        points.push(SweepPoint { value: v.clone(), report });
    }
    write(&cfg.out_dir.join("sweep.csv"), &sweep_csv(param, &points))?;
    Ok(points)
}

pub fn sweep_csv(param: &str, points: &[SweepPoint]) -> String {
    let mut s = String::from(
        "param,value,coarse_p2s_cm,coarse_chamfer_l2,coarse_iou,refined_p2s_cm,refined_chamfer_l2,refined_iou\n",
    );
    for p in points {
        let c = MeanMetrics::of(&p.report.coarse);
        let _ = write!(s, "{param},{},{:.6},{:.6},{:.6}", p.value, c.p2s_cm, c.chamfer_l2, c.iou);
        match p.report.refined.as_deref().map(MeanMetrics::of) {
            Some(r) => {
                let _ = writeln!(s, ",{:.6},{:.6},{:.6}", r.p2s_cm, r.chamfer_l2, r.iou);
            }
            None => s.push_str(",,,\n"),
        }
    }
    s
}
