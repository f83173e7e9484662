use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::mlp::check_widths;
use crate::tensor::fnv1a64;

/// Coarse-network architecture and training schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseConfig {
    /// Views rendered per subject.
    pub views: usize,
    /// Hourglass stages M.
    pub stages: usize,
    /// Feature channels C of every stage.
    pub channels: usize,
    /// Square image extent in pixels.
    pub image_size: usize,
    /// Output widths of the MLP layers; the last is 1.
    pub mlp_widths: Vec<usize>,
    /// Labeled points drawn per sample per epoch.
    pub point_count: usize,
    /// Gaussian displacement of training points from the surface (cm).
    pub sigma: f64,
    /// Share of training points drawn uniformly in the scene volume.
    pub uniform_fraction: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epoch at which the learning rate is multiplied by `lr_decay` (0 = never).
    pub decay_epoch: usize,
}

impl CoarseConfig {
    /// Full-size network: 4 stages of 256 channels on 256² images.
    pub fn paper() -> Self {
        CoarseConfig {
            views: 4,
            stages: 4,
            channels: 256,
            image_size: 256,
            mlp_widths: vec![1024, 512, 128, 1],
            point_count: 10_000,
            sigma: 5.0,
            uniform_fraction: 0.0,
            epochs: 12,
            batch: 4,
            lr: 1e-3,
            lr_decay: 0.1,
            decay_epoch: 10,
        }
    }

    /// Laptop-scale network.
    pub fn desk() -> Self {
        CoarseConfig {
            views: 4,
            stages: 2,
            channels: 16,
            image_size: 64,
            mlp_widths: vec![128, 64, 32, 1],
            point_count: 512,
            sigma: 3.0,
            uniform_fraction: 0.1,
            epochs: 30,
            batch: 4,
            lr: 2e-3,
            lr_decay: 0.1,
            decay_epoch: 24,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::config(format!("unknown preset `{name}` (expected desk or paper)"))),
        }
    }

    /// Per-view query vector length: features of every stage plus depth.
    pub fn query_width(&self) -> usize {
        self.stages * self.channels + 1
    }

    /// Spatial extent of each stage's feature grid.
    pub fn stage_extents(&self) -> Vec<usize> {
        (1..=self.stages).map(|j| self.image_size >> j).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views == 0 || self.stages == 0 || self.channels == 0 {
            return Err(Error::config("views, stages and channels must be positive"));
        }
        // Each stage halves twice inside its hourglass.
        let unit = 1usize.checked_shl(self.stages as u32 + 2).unwrap_or(0);
        if unit == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(unit) {
            return Err(Error::config(format!(
                "image extent {} must be a positive multiple of {} for {} hourglass stages",
                self.image_size, unit, self.stages
            )));
        }
        check_widths(self.query_width(), &self.mlp_widths)?;
        if self.point_count == 0 || self.batch == 0 {
            return Err(Error::config("point count and batch size must be positive"));
        }
        if !(self.sigma > 0.0) || !(0.0..1.0).contains(&self.uniform_fraction) {
            return Err(Error::config("sigma must be positive and the uniform fraction in [0, 1)"));
        }
        if !(self.lr >= 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::config("learning rate must be non-negative and decay positive"));
        }
        Ok(())
    }

    /// Identifies parameter layouts; stored in checkpoints.
    pub fn arch_hash(&self) -> u64 {
        fnv1a64(format!("coarse:{}:{}:{}:{:?}", self.stages, self.channels, self.image_size, self.mlp_widths))
    }

    pub fn write_kv(&self, doc: &mut KvDoc, prefix: &str) {
        let k = |s: &str| format!("{prefix}.{s}");
        doc.set(&k("views"), self.views);
        doc.set(&k("stages"), self.stages);
        doc.set(&k("channels"), self.channels);
        doc.set(&k("image_size"), self.image_size);
        doc.set(&k("mlp_widths"), join(&self.mlp_widths));
        doc.set(&k("point_count"), self.point_count);
        doc.set(&k("sigma"), format!("{:?}", self.sigma));
        doc.set(&k("uniform_fraction"), format!("{:?}", self.uniform_fraction));
        doc.set(&k("epochs"), self.epochs);
        doc.set(&k("batch"), self.batch);
        doc.set(&k("lr"), format!("{:?}", self.lr));
        doc.set(&k("lr_decay"), format!("{:?}", self.lr_decay));
        doc.set(&k("decay_epoch"), self.decay_epoch);
    }

    /// Reads `prefix.*` keys; missing keys keep the values of `base`.
    pub fn read_kv(doc: &KvDoc, prefix: &str, base: &Self) -> Result<Self> {
        let mut c = base.clone();
        let has = |s: &str| doc.entries.contains_key(&format!("{prefix}.{s}"));
        let k = |s: &str| format!("{prefix}.{s}");
        macro_rules! read {
            ($field:ident) => {
                if has(stringify!($field)) {
                    c.$field = doc.get(&k(stringify!($field)))?;
                }
            };
        }
        read!(views);
        read!(stages);
        read!(channels);
        read!(image_size);
        read!(point_count);
        read!(sigma);
        read!(uniform_fraction);
        read!(epochs);
        read!(batch);
        read!(lr);
        read!(lr_decay);
        read!(decay_epoch);
        if has("mlp_widths") {
            c.mlp_widths = doc.list(&k("mlp_widths"))?;
        }
        Ok(c)
    }
}

pub(crate) fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}
