use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::mfpifu::config_join as join;
use crate::mlp::check_widths;
use crate::tensor::fnv1a64;

/// Refinement-network architecture and training schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct VsrConfig {
    /// Input grid resolution N.
    pub resolution: usize,
    /// Output channels of each 3D convolution stage.
    pub channels: Vec<usize>,
    pub mlp_widths: Vec<usize>,
    pub sigma_max: f64,
    pub sigma_min: f64,
    /// Labeled points drawn per sample per epoch.
    pub point_count: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Query lattice of `refine`; 0 selects twice the input resolution.
    pub output_resolution: usize,
}

impl VsrConfig {
    /// Full-size network: 5 stages over a 128³ grid.
    pub fn paper() -> Self {
        VsrConfig {
            resolution: 128,
            channels: vec![16, 32, 64, 128, 128],
            mlp_widths: vec![256, 256, 256, 1],
            sigma_max: 15.0,
            sigma_min: 1.5,
            point_count: 10_000,
            epochs: 30,
            batch: 4,
            lr: 1e-4,
            output_resolution: 0,
        }
    }

    /// Laptop-scale network.
    pub fn desk() -> Self {
        VsrConfig {
            resolution: 64,
            channels: vec![4, 8, 16],
            mlp_widths: vec![64, 32, 1],
            sigma_max: 15.0,
            sigma_min: 1.5,
            point_count: 2048,
            epochs: 30,
            batch: 2,
            lr: 2e-3,
            output_resolution: 0,
        }
    }

    /// `paper` and `desk`; `paper-s5` is the paper preset with the 5 cm σ_min
    /// quoted alongside the architecture.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "paper-s5" => Ok(VsrConfig { sigma_min: 5.0, ..Self::paper() }),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::config(format!("unknown preset `{name}` (expected desk, paper or paper-s5)"))),
        }
    }

    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    /// Concatenated multi-scale feature length.
    pub fn query_width(&self) -> usize {
        self.channels.iter().sum()
    }

    pub fn stage_extents(&self) -> Vec<usize> {
        (0..self.stages()).map(|k| self.resolution >> k).collect()
    }

    pub fn effective_output_resolution(&self) -> usize {
        if self.output_resolution == 0 {
            2 * self.resolution
        } else {
            self.output_resolution
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("VSR needs at least one stage with positive channels"));
        }
        let unit = 1usize.checked_shl(self.stages() as u32 - 1).unwrap_or(0);
        if unit == 0 || self.resolution < 2 || !self.resolution.is_multiple_of(unit) {
            return Err(Error::config(format!(
                "input resolution {} must be divisible by {unit} for {} stages",
                self.resolution,
                self.stages()
            )));
        }
        check_widths(self.query_width(), &self.mlp_widths)?;
        if !(self.sigma_max > 0.0 && self.sigma_min > 0.0) {
            return Err(Error::config("sigma_max and sigma_min must be positive"));
        }
        if self.point_count == 0 || self.batch == 0 {
            return Err(Error::config("point count and batch size must be positive"));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::config("learning rate must be non-negative"));
        }
        if self.output_resolution == 1 {
            return Err(Error::config("output resolution must be at least 2"));
        }
        Ok(())
    }

    pub fn arch_hash(&self) -> u64 {
        fnv1a64(format!("vsr:{}:{:?}:{:?}", self.resolution, self.channels, self.mlp_widths))
    }

    pub fn write_kv(&self, doc: &mut KvDoc, prefix: &str) {
        let k = |s: &str| format!("{prefix}.{s}");
        doc.set(&k("resolution"), self.resolution);
        doc.set(&k("channels"), join(&self.channels));
        doc.set(&k("mlp_widths"), join(&self.mlp_widths));
        doc.set(&k("sigma_max"), format!("{:?}", self.sigma_max));
        doc.set(&k("sigma_min"), format!("{:?}", self.sigma_min));
        doc.set(&k("point_count"), self.point_count);
        doc.set(&k("epochs"), self.epochs);
        doc.set(&k("batch"), self.batch);
        doc.set(&k("lr"), format!("{:?}", self.lr));
        doc.set(&k("output_resolution"), self.output_resolution);
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
        read!(resolution);
        read!(sigma_max);
        read!(sigma_min);
        read!(point_count);
        read!(epochs);
        read!(batch);
        read!(lr);
        read!(output_resolution);
        if has("channels") {
            c.channels = doc.list(&k("channels"))?;
        }
        if has("mlp_widths") {
            c.mlp_widths = doc.list(&k("mlp_widths"))?;
        }
        Ok(c)
    }
}
