use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{corrupt_coarse, generate_shape, render_views, CorruptionSpec, GrayImage, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::{Camera, CubeBounds, TriMesh};
use crate::kv::KvDoc;
use crate::parallel::{try_map_indexed, worker_count};
use crate::tensor::fnv1a64;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const DATASET_FILE: &str = "dataset.txt";
pub const MANIFEST_HEADER: &str = "sample_id,split,gt_mesh,coarse_mesh,images,cameras";

/// Corpus generation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub views: usize,
    pub image_size: usize,
    pub split_ratio: f64,
    pub seed: u64,
    /// Body heights are drawn uniformly from this range (cm).
    pub height_range: (f64, f64),
    /// Shared scene volume, centered at the origin.
    pub half_extent: f64,
    pub field_resolution: usize,
    pub corruption: CorruptionSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 50,
            views: 4,
            image_size: 64,
            split_ratio: 0.8,
            seed: 0,
            height_range: (90.0, 100.0),
            half_extent: 64.0,
            field_resolution: 96,
            corruption: CorruptionSpec::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("dataset count must be positive"));
        }
        if !(self.views == 4 || self.views == 8) {
            return Err(Error::config(format!("view layout must be 4 or 8, got {}", self.views)));
        }
        if self.image_size < 8 {
            return Err(Error::config("image extent must be at least 8"));
        }
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return Err(Error::config(format!("split ratio {} outside [0, 1]", self.split_ratio)));
        }
        let (lo, hi) = self.height_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.8 * self.half_extent) {
            return Err(Error::config("body height range must be positive and fit the scene volume"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> CubeBounds {
        CubeBounds::centered([0.0; 3], self.half_extent).expect("validated extent")
    }

    /// Training count: `round(count · ratio)`.
    pub fn train_count(&self) -> usize {
        (self.count as f64 * self.split_ratio).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::parse(format!("unknown split `{s}`"))),
        }
    }
}

/// One sample; paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    pub gt_mesh: PathBuf,
    pub coarse_mesh: PathBuf,
    pub images: Vec<PathBuf>,
    pub cameras: Vec<PathBuf>,
}

/// Loaded per-sample data.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub gt: TriMesh,
    pub coarse: TriMesh,
    pub images: Vec<GrayImage>,
    pub cameras: Vec<Camera>,
}

/// Dataset index: shared settings plus one record per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub bounds: CubeBounds,
    pub views: usize,
    pub image_size: usize,
    pub split_ratio: f64,
    pub samples: Vec<SampleRecord>,
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    fnv1a64(format!("sample:{seed}:{index}"))
}

fn rel_str(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        let join = |v: &[PathBuf]| v.iter().map(|p| rel_str(p)).collect::<Vec<_>>().join(";");
        for r in &self.samples {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.id,
                r.split.as_str(),
                rel_str(&r.gt_mesh),
                rel_str(&r.coarse_mesh),
                join(&r.images),
                join(&r.cameras)
            );
        }
        s
    }

    fn settings(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        let b = self.bounds;
        doc.set("bounds.min", format!("{:?} {:?} {:?}", b.min[0], b.min[1], b.min[2]));
        doc.set("bounds.size", format!("{:?}", b.size));
        doc.set("views", self.views);
        doc.set("image_size", self.image_size);
        doc.set("split_ratio", format!("{:?}", self.split_ratio));
        doc
    }

    pub fn write(&self) -> Result<()> {
        fs::write(self.root.join(MANIFEST_FILE), self.to_csv())?;
        fs::write(self.root.join(DATASET_FILE), self.settings().to_text())?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let doc = KvDoc::parse(&fs::read_to_string(root.join(DATASET_FILE))?)?;
        let min: Vec<f64> = doc.list("bounds.min")?;
        if min.len() != 3 {
            return Err(Error::parse("`bounds.min` needs 3 numbers"));
        }
        let bounds = CubeBounds::new([min[0], min[1], min[2]], doc.get("bounds.size")?)?;
        let csv = fs::read_to_string(root.join(MANIFEST_FILE))?;
        let mut lines = csv.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::parse(format!("{MANIFEST_FILE}: unexpected header")));
        }
        let paths = |f: &str| f.split(';').filter(|p| !p.is_empty()).map(PathBuf::from).collect::<Vec<_>>();
        let samples = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 6 {
                    return Err(Error::parse(format!("{MANIFEST_FILE}: expected 6 fields in `{l}`")));
                }
                Ok(SampleRecord {
                    id: f[0].to_string(),
                    split: f[1].parse()?,
                    gt_mesh: PathBuf::from(f[2]),
                    coarse_mesh: PathBuf::from(f[3]),
                    images: paths(f[4]),
                    cameras: paths(f[5]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetManifest {
            root: root.to_path_buf(),
            bounds,
            views: doc.get("views")?,
            image_size: doc.get("image_size")?,
            split_ratio: doc.get("split_ratio")?,
            samples,
        })
    }

    /// Reads every file of a record.
    pub fn load_sample(&self, record: &SampleRecord) -> Result<Sample> {
        let at = |p: &Path| self.root.join(p);
        let images = record.images.iter().map(|p| GrayImage::load_png(&at(p))).collect::<Result<Vec<_>>>()?;
        let cameras = record
            .cameras
            .iter()
            .map(|p| Camera::from_text(&fs::read_to_string(at(p))?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sample {
            id: record.id.clone(),
            gt: TriMesh::read_obj(&at(&record.gt_mesh))?,
            coarse: TriMesh::read_obj(&at(&record.coarse_mesh))?,
            images,
            cameras,
        })
    }
}

/// Generates, renders and corrupts `count` articulated subjects under `out`
/// and writes the manifest. Output bytes depend only on `cfg`.
pub fn build_dataset(cfg: &DatasetConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let bounds = cfg.bounds();
    let mut order: Vec<usize> = (0..cfg.count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(fnv1a64(format!("split:{}", cfg.seed))));
    let mut split = vec![Split::Test; cfg.count];
    for &i in &order[..cfg.train_count()] {
        split[i] = Split::Train;
    }

    let samples = try_map_indexed(cfg.count, worker_count(), |i| -> Result<SampleRecord> {
        let id = format!("s{i:03}");
        let seed = sample_seed(cfg.seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let height = rand::Rng::random_range(&mut rng, cfg.height_range.0..=cfg.height_range.1);
        let spec =
            SceneSpec { field_resolution: cfg.field_resolution, ..SceneSpec::articulated(height, [0.0; 3], seed) };
        let gt = generate_shape(&spec)?;
        bounds.check_contains(&gt)?;
        let coarse = corrupt_coarse(&gt, &cfg.corruption, Some(&bounds), seed ^ 0x5bd1_e995)?;
        let (images, cameras) = render_views(&gt, cfg.views, cfg.image_size, &bounds)?;

        let rel = PathBuf::from(&id);
        fs::create_dir_all(out.join(&rel))?;
        let gt_mesh = rel.join("gt.obj");
        let coarse_mesh = rel.join("coarse.obj");
        gt.write_obj(&out.join(&gt_mesh))?;
        coarse.write_obj(&out.join(&coarse_mesh))?;
        let mut image_paths = Vec::new();
        let mut camera_paths = Vec::new();
        for (k, (img, cam)) in images.iter().zip(&cameras).enumerate() {
            let ip = rel.join(format!("view{k}.png"));
            let cp = rel.join(format!("view{k}.cam"));
            img.save_png(&out.join(&ip))?;
            fs::write(out.join(&cp), cam.to_text())?;
            image_paths.push(ip);
            camera_paths.push(cp);
        }
        Ok(SampleRecord { id, split: split[i], gt_mesh, coarse_mesh, images: image_paths, cameras: camera_paths })
    })?;

    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        bounds,
        views: cfg.views,
        image_size: cfg.image_size,
        split_ratio: cfg.split_ratio,
        samples,
    };
    manifest.write()?;
    Ok(manifest)
}

/// Picks `n` of `available` evenly spaced views (every `available/n`-th).
pub fn view_subset(available: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > available || !available.is_multiple_of(n) {
        return Err(Error::config(format!("cannot pick {n} evenly spaced views out of {available}")));
    }
    Ok((0..n).map(|k| k * (available / n)).collect())
}
