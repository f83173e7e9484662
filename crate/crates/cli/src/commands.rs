//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use occufield::datagen::{build_dataset, DatasetManifest, Split, MANIFEST_FILE};
use occufield::geometry::{voxelize, CubeBounds, Point3, TriMesh};
use occufield::metrics::{error_heatmap_export, evaluate, EvalReport};

use crate::config::RunConfig;
use crate::error::{CliError, Result, StageExt};
use crate::pipeline::{
    self, check_dataset, evaluate_stage, load_coarse, load_vsr, refine_stage, require, run_pipeline, run_sweep,
    train_coarse_stage, train_vsr_stage, Log, Meshes,
};

#[derive(Debug, Parser)]
#[command(name = "occufield", version, about = "Two-stage multi-view human body reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus overrides, shared by every config-driven command.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// Key-value run configuration; keys absent from it come from its preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long)]
    preset: Option<String>,
    /// Override one key, e.g. `--set vsr.sigma_max=25` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                require(path, "config file")?;
                RunConfig::load(path)?
            }
            None => RunConfig::preset(self.preset.as_deref().unwrap_or("desk"))?,
        };
        if let (Some(p), Some(_)) = (&self.preset, &self.config) {
            if *p != cfg.preset {
                return Err(CliError::Usage(format!(
                    "--preset {p} conflicts with the config file's preset {}",
                    cfg.preset
                )));
            }
        }
        cfg.apply_overrides(&self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        Ok(cfg)
    }
}

/// Scene volume for commands working on bare meshes.
#[derive(Debug, Args)]
struct BoundsArgs {
    /// Take the volume from this dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Half side of a cube volume (cm); defaults to `data.half_extent`.
    #[arg(long)]
    half_extent: Option<f64>,
    /// Center of the cube volume, `x,y,z`.
    #[arg(long, value_parser = parse_point)]
    center: Option<Point3>,
}

impl BoundsArgs {
    fn resolve(&self, cfg: &RunConfig) -> Result<CubeBounds> {
        if let Some(dir) = &self.data {
            return Ok(open_dataset(dir)?.bounds);
        }
        CubeBounds::centered(self.center.unwrap_or([0.0; 3]), self.half_extent.unwrap_or(cfg.data.half_extent))
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

fn parse_point(s: &str) -> std::result::Result<Point3, String> {
    let v: Vec<f64> =
        s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"))).collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected three comma-separated numbers".to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus (meshes, renders, cameras, corrupted coarse shapes).
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory; defaults to `paths.dataset`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the multi-view coarse network on the training split.
    TrainCoarse {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model directory receiving the checkpoint and its config.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct coarse meshes with a trained coarse network.
    Reconstruct {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Which samples: train, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        /// Lattice resolution; defaults to `pipeline.coarse_resolution`.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Voxelize a watertight mesh into an occupancy grid.
    Voxelize {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `vsr.resolution`.
        #[arg(long)]
        resolution: Option<usize>,
        #[command(flatten)]
        bounds: BoundsArgs,
    },
    /// Train the voxel super-resolution network on (coarse, ground truth) pairs.
    TrainVsr {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory of `<sample>.obj` coarse meshes; defaults to the dataset's corrupted meshes.
        #[arg(long)]
        coarse: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine coarse meshes with a trained VSR network.
    Refine {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        /// A coarse mesh, or a directory of them.
        #[arg(long)]
        coarse: PathBuf,
        /// Output mesh (file input) or directory (directory input).
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        bounds: BoundsArgs,
    },
    /// Score predictions against ground truth (P2S, Chamfer-L2, IoU).
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// A predicted mesh, or a directory of `<sample>.obj` (needs --data).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth mesh for a single prediction.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Row label for a single prediction.
        #[arg(long, default_value = "pred")]
        id: String,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the prediction colored by its distance to the ground truth.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Run the full pipeline once per value of one ablation axis.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// One of vsr.sigma_max, vsr.sigma_min, vsr.resolution, coarse.views.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// gen-data (if absent) → train-coarse → reconstruct → train-vsr → refine → evaluate.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn open_dataset(dir: &Path) -> Result<DatasetManifest> {
    require(&dir.join(MANIFEST_FILE), "dataset manifest")?;
    DatasetManifest::load(dir).stage("load")
}

fn dataset_for(cfg: &RunConfig, data: &Option<PathBuf>) -> Result<DatasetManifest> {
    let m = open_dataset(data.as_deref().unwrap_or(&cfg.dataset_dir))?;
    check_dataset(cfg, &m)?;
    Ok(m)
}

fn read_mesh(path: &Path) -> Result<TriMesh> {
    require(path, "mesh")?;
    TriMesh::read_obj(path).stage("load")
}

/// `<id>.obj` files of a directory, sorted by id.
fn read_mesh_dir(dir: &Path) -> Result<Meshes> {
    require(dir, "mesh directory")?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(occufield::Error::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "obj"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, TriMesh::read_obj(&p).stage("load")?))
        })
        .collect()
}

fn print_csv(csv: &str, out: &Option<PathBuf>) -> Result<()> {
    print!("{csv}");
    if let Some(path) = out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(occufield::Error::from)?;
        }
        fs::write(path, csv).map_err(occufield::Error::from)?;
    }
    Ok(())
}

/// Volume around both meshes: their joint bounding box grown by 10% per side.
fn joint_bounds(a: &TriMesh, b: &TriMesh) -> Result<CubeBounds> {
    let boxes: Vec<_> = [a, b].iter().filter_map(|m| m.bounding_box()).collect();
    let (lo, hi) = boxes
        .iter()
        .copied()
        .reduce(|(l1, h1), (l2, h2)| {
            (std::array::from_fn(|i| l1[i].min(l2[i])), std::array::from_fn(|i| h1[i].max(h2[i])))
        })
        .ok_or_else(|| CliError::Config("both meshes are empty".into()))?;
    let center = std::array::from_fn(|i| 0.5 * (lo[i] + hi[i]));
    let half = (0..3).map(|i| 0.5 * (hi[i] - lo[i])).fold(0.0, f64::max) * 1.2;
    CubeBounds::centered(center, half.max(1e-6)).stage("evaluate")
}

fn dispatch(cmd: Command, log: Log) -> Result<()> {
    match cmd {
        Command::GenData { cfg, out } => {
            let cfg = cfg.resolve()?;
            let dir = out.unwrap_or(cfg.dataset_dir.clone());
            let m = build_dataset(&cfg.data, &dir).stage("gen-data")?;
            log(&format!(
                "stage=gen-data samples={} train={} test={} dir={}",
                m.samples.len(),
                m.split(Split::Train).count(),
                m.split(Split::Test).count(),
                dir.display()
            ));
        }
        Command::TrainCoarse { cfg, data, out } => {
            let cfg = cfg.resolve()?;
            let m = dataset_for(&cfg, &data)?;
            train_coarse_stage(&cfg, &m, &out, log)?;
        }
        Command::Reconstruct { cfg, data, model, out, split, resolution } => {
            let mut cfg = cfg.resolve()?;
            if let Some(r) = resolution {
                cfg.set("pipeline.coarse_resolution", &r.to_string())?;
            }
            let net = load_coarse(&model)?;
            let m = open_dataset(data.as_deref().unwrap_or(&cfg.dataset_dir))?;
            let records: Vec<_> = match split.as_str() {
                "all" => m.samples.iter().collect(),
                s => m.split(s.parse::<Split>().map_err(|e| CliError::Usage(e.to_string()))?).collect(),
            };
            pipeline::reconstruct_stage(&cfg, &net, &m, &records, &out, log)?;
        }
        Command::Voxelize { cfg, mesh, out, resolution, bounds } => {
            let cfg = cfg.resolve()?;
            let mesh = read_mesh(&mesh)?;
            let b = bounds.resolve(&cfg)?;
            let grid = voxelize(&mesh, resolution.unwrap_or(cfg.vsr.resolution), &b).stage("voxelize")?;
            grid.write(&out).stage("voxelize")?;
            log(&format!("stage=voxelize resolution={} occupied={}", grid.resolution, grid.occupied_count()));
        }
        Command::TrainVsr { cfg, data, coarse, out } => {
            let cfg = cfg.resolve()?;
            let m = dataset_for(&cfg, &data)?;
            let train_ids: Vec<&str> = m.split(Split::Train).map(|r| r.id.as_str()).collect();
            let pairs = match coarse {
                Some(dir) => {
                    read_mesh_dir(&dir)?.into_iter().filter(|(id, _)| train_ids.contains(&id.as_str())).collect()
                }
                None => m
                    .split(Split::Train)
                    .map(|r| Ok((r.id.clone(), TriMesh::read_obj(&m.root.join(&r.coarse_mesh)).stage("load")?)))
                    .collect::<Result<Vec<_>>>()?,
            };
            train_vsr_stage(&cfg, &m, &pairs, &out, log)?;
        }
        Command::Refine { cfg, model, coarse, out, bounds } => {
            let cfg = cfg.resolve()?;
            let net = load_vsr(&model)?;
            let b = bounds.resolve(&cfg)?;
            if coarse.is_dir() {
                refine_stage(&net, &read_mesh_dir(&coarse)?, &b, &out, log)?;
            } else {
                let mesh = read_mesh(&coarse)?;
                let res = net.config.effective_output_resolution();
                let (_, refined) = occufield::vsr::refine(&net, &mesh, res, &b).stage("refine")?;
                if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(occufield::Error::from)?;
                }
                refined.write_obj(&out).stage("refine")?;
                log(&format!("stage=refine triangles={}", refined.triangles.len()));
            }
        }
        Command::Evaluate { cfg, pred, gt, data, id, out, heatmap } => {
            let cfg = cfg.resolve()?;
            match gt {
                Some(gt_path) => {
                    let p = read_mesh(&pred)?;
                    let g = read_mesh(&gt_path)?;
                    let b = match &data {
                        Some(dir) => open_dataset(dir)?.bounds,
                        None => joint_bounds(&p, &g)?,
                    };
                    let r = evaluate(&id, &p, &g, &b, &cfg.metrics).stage("evaluate")?;
                    if let Some(h) = &heatmap {
                        error_heatmap_export(&p, &g, h).stage("evaluate")?;
                    }
                    print_csv(&EvalReport::to_csv(&[r]), &out)?;
                }
                None => {
                    let dir = data.ok_or_else(|| {
                        CliError::Usage("evaluate needs --gt, or --data with a prediction directory".into())
                    })?;
                    let m = open_dataset(&dir)?;
                    let reports = evaluate_stage(&m, &read_mesh_dir(&pred)?, &cfg.metrics)?;
                    print_csv(&EvalReport::to_csv(&reports), &out)?;
                }
            }
        }
        Command::Sweep { cfg, param, values, out } => {
            let mut cfg = cfg.resolve()?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            run_sweep(&cfg, &param, &values, log)?;
            print!("{}", fs::read_to_string(cfg.out_dir.join("sweep.csv")).map_err(occufield::Error::from)?);
        }
        Command::Pipeline { cfg, out } => {
            let mut cfg = cfg.resolve()?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let report = run_pipeline(&cfg, log)?;
            print!("{}", report.comparison_csv());
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status: 0 on success, 2 on usage errors, 1 otherwise.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut log = |line: &str| println!("{line}");
    match dispatch(cli.command, &mut log) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `occufield --help` for usage");
            }
            e.exit_code()
        }
    }
}
