//! Run configuration: one canonical key-value document covering every stage.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use occufield::datagen::{CorruptionSpec, DatasetConfig};
use occufield::kv::KvDoc;
use occufield::metrics::MetricConfig;
use occufield::mfpifu::CoarseConfig;
use occufield::vsr::VsrConfig;

use crate::error::{CliError, Result};

/// Where the VSR stage takes its coarse shapes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoarseSource {
    /// Meshes reconstructed by the trained coarse network.
    Network,
    /// The corrupted ground-truth meshes stored with the dataset.
    Corrupted,
}

/// Last stage the pipeline runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopAfter {
    Coarse,
    Refined,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(format!("`{s}` is not one of {}", [$($name),+].join("|"))),
                }
            }
        }
    };
}

keyword_enum!(CoarseSource { Network => "network", Corrupted => "corrupted" });
keyword_enum!(StopAfter { Coarse => "coarse", Refined => "refined" });

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub coarse_source: CoarseSource,
    /// Lattice resolution of coarse reconstruction.
    pub coarse_resolution: usize,
    pub stop_after: StopAfter,
}

/// Everything one run needs. The dataset image extent follows
/// `coarse.image_size`; the metric seed follows `seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    pub data: DatasetConfig,
    pub coarse: CoarseConfig,
    pub vsr: VsrConfig,
    pub metrics: MetricConfig,
    pub pipeline: PipelineConfig,
}

fn config_err(e: occufield::Error) -> CliError {
    match e {
        occufield::Error::Config(m) | occufield::Error::Parse(m) => CliError::Config(m),
        other => CliError::Config(other.to_string()),
    }
}

impl RunConfig {
    /// `desk` runs in minutes on a laptop CPU; `paper` carries the full-size
    /// architecture and schedule and is compute-heavy.
    pub fn preset(name: &str) -> Result<Self> {
        let (data, coarse, vsr, coarse_resolution) = match name {
            "desk" => (DatasetConfig::default(), CoarseConfig::desk(), VsrConfig::desk(), 64),
            "paper" => (
                DatasetConfig { count: 2000, image_size: 256, field_resolution: 128, ..DatasetConfig::default() },
                CoarseConfig::paper(),
                VsrConfig::paper(),
                256,
            ),
            _ => return Err(CliError::Config(format!("unknown preset `{name}` (expected desk or paper)"))),
        };
        let cfg = RunConfig {
            preset: name.to_string(),
            seed: 0,
            dataset_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            data: DatasetConfig { image_size: coarse.image_size, ..data },
            coarse,
            vsr,
            metrics: MetricConfig::default(),
            pipeline: PipelineConfig {
                coarse_source: CoarseSource::Network,
                coarse_resolution,
                stop_after: StopAfter::Refined,
            },
        };
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::default();
        d.set("preset", &self.preset);
        d.set("seed", self.seed);
        d.set("paths.dataset", self.dataset_dir.display());
        d.set("paths.out", self.out_dir.display());
        let c = &self.data.corruption;
        d.set("data.count", self.data.count);
        d.set("data.views", self.data.views);
        d.set("data.split_ratio", format!("{:?}", self.data.split_ratio));
        d.set("data.height_min", format!("{:?}", self.data.height_range.0));
        d.set("data.height_max", format!("{:?}", self.data.height_range.1));
        d.set("data.half_extent", format!("{:?}", self.data.half_extent));
        d.set("data.field_resolution", self.data.field_resolution);
        d.set("data.corrupt.blobs_min", c.blobs.0);
        d.set("data.corrupt.blobs_max", c.blobs.1);
        d.set("data.corrupt.blob_height_min", format!("{:?}", c.blob_height.0));
        d.set("data.corrupt.blob_height_max", format!("{:?}", c.blob_height.1));
        d.set("data.corrupt.blob_width_min", format!("{:?}", c.blob_width.0));
        d.set("data.corrupt.blob_width_max", format!("{:?}", c.blob_width.1));
        d.set("data.corrupt.noise_sigma", format!("{:?}", c.noise_sigma));
        d.set("data.corrupt.inflate", format!("{:?}", c.inflate));
        self.coarse.write_kv(&mut d, "coarse");
        self.vsr.write_kv(&mut d, "vsr");
        d.set("metrics.sample_count", self.metrics.sample_count);
        d.set("metrics.iou_resolution", self.metrics.iou_resolution);
        d.set("metrics.symmetric_p2s", self.metrics.symmetric_p2s);
        d.set("pipeline.coarse_source", self.pipeline.coarse_source);
        d.set("pipeline.coarse_resolution", self.pipeline.coarse_resolution);
        d.set("pipeline.stop_after", self.pipeline.stop_after);
        d
    }

    /// Canonical text: every key, sorted.
    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }

    /// Builds the config named by `preset` (default `desk`) and applies every
    /// other key on top. Unknown keys are rejected.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let preset = doc.entries.get("preset").map_or("desk", String::as_str);
        let base = Self::preset(preset)?;
        let known: BTreeSet<String> = base.to_kv().entries.into_keys().collect();
        if let Some(k) = doc.entries.keys().find(|k| !known.contains(*k)) {
            return Err(CliError::Config(format!("unknown key `{k}`")));
        }
        let mut full = base.to_kv();
        full.entries.extend(doc.entries.clone());
        let cfg = Self::read_full(&full, &base).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn read_full(d: &KvDoc, base: &Self) -> occufield::Result<Self> {
        let corruption = CorruptionSpec {
            blobs: (d.get("data.corrupt.blobs_min")?, d.get("data.corrupt.blobs_max")?),
            blob_height: (d.get("data.corrupt.blob_height_min")?, d.get("data.corrupt.blob_height_max")?),
            blob_width: (d.get("data.corrupt.blob_width_min")?, d.get("data.corrupt.blob_width_max")?),
            noise_sigma: d.get("data.corrupt.noise_sigma")?,
            inflate: d.get("data.corrupt.inflate")?,
        };
        let seed = d.get("seed")?;
        let coarse = CoarseConfig::read_kv(d, "coarse", &base.coarse)?;
        let data = DatasetConfig {
            count: d.get("data.count")?,
            views: d.get("data.views")?,
            image_size: coarse.image_size,
            split_ratio: d.get("data.split_ratio")?,
            seed,
            height_range: (d.get("data.height_min")?, d.get("data.height_max")?),
            half_extent: d.get("data.half_extent")?,
            field_resolution: d.get("data.field_resolution")?,
            corruption,
        };
        let keyword = |key: &str| -> occufield::Result<String> { Ok(d.raw(key)?.to_string()) };
        let parse_kw = |key: &str, v: String| occufield::Error::Parse(format!("`{key}`: {v}"));
        Ok(RunConfig {
            preset: keyword("preset")?,
            seed,
            dataset_dir: PathBuf::from(d.raw("paths.dataset")?),
            out_dir: PathBuf::from(d.raw("paths.out")?),
            data,
            coarse,
            vsr: VsrConfig::read_kv(d, "vsr", &base.vsr)?,
            metrics: MetricConfig {
                sample_count: d.get("metrics.sample_count")?,
                iou_resolution: d.get("metrics.iou_resolution")?,
                symmetric_p2s: d.get("metrics.symmetric_p2s")?,
                seed,
            },
            pipeline: PipelineConfig {
                coarse_source: keyword("pipeline.coarse_source")?
                    .parse()
                    .map_err(|e| parse_kw("pipeline.coarse_source", e))?,
                coarse_resolution: d.get("pipeline.coarse_resolution")?,
                stop_after: keyword("pipeline.stop_after")?.parse().map_err(|e| parse_kw("pipeline.stop_after", e))?,
            },
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvDoc::parse(text).map_err(config_err)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `key = value` on top of this config. Changing `preset` resets
    /// every key to that preset first.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut doc = if key == "preset" { KvDoc::default() } else { self.to_kv() };
        doc.set(key, value);
        if key != "preset" && !self.to_kv().entries.contains_key(key) {
            return Err(CliError::Config(format!("unknown key `{key}`")));
        }
        *self = Self::from_kv(&doc)?;
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{o}` is not of the form key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Cross-stage invariants on top of each block's own checks.
    pub fn validate(&self) -> Result<()> {
        self.data.validate().map_err(config_err)?;
        self.coarse.validate().map_err(config_err)?;
        self.vsr.validate().map_err(config_err)?;
        if self.coarse.views > self.data.views || !self.data.views.is_multiple_of(self.coarse.views) {
            return Err(CliError::Config(format!(
                "coarse.views = {} must divide data.views = {}",
                self.coarse.views, self.data.views
            )));
        }
        if self.metrics.sample_count == 0 || self.metrics.iou_resolution == 0 {
            return Err(CliError::Config("metrics.sample_count and metrics.iou_resolution must be positive".into()));
        }
        if self.pipeline.coarse_resolution < 2 {
            return Err(CliError::Config("pipeline.coarse_resolution must be at least 2".into()));
        }
        Ok(())
    }

    /// Text of the `coarse.*` block, stored next to a coarse checkpoint.
    pub fn coarse_model_text(&self) -> String {
        let mut d = KvDoc::default();
        self.coarse.write_kv(&mut d, "coarse");
        d.to_text()
    }

    pub fn vsr_model_text(&self) -> String {
        let mut d = KvDoc::default();
        self.vsr.write_kv(&mut d, "vsr");
        d.to_text()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_canonically() {
        for name in ["desk", "paper"] {
            let cfg = RunConfig::preset(name).unwrap();
            let text = cfg.to_text();
            let back = RunConfig::parse(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn partial_files_fill_from_preset() {
        let cfg = RunConfig::parse("preset = desk\nseed = 7\nvsr.sigma_max = 25.0\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.data.seed, 7);
        assert_eq!(cfg.metrics.seed, 7);
        assert_eq!(cfg.vsr.sigma_max, 25.0);
        assert_eq!(cfg.coarse, CoarseConfig::desk());
    }

    #[test]
    fn rejects_unknown_keys_and_violations() {
        assert!(matches!(RunConfig::parse("vsr.sigma = 1"), Err(CliError::Config(m)) if m.contains("vsr.sigma")));
        assert!(matches!(RunConfig::parse("preset = huge"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("coarse.views = 3"), Err(CliError::Config(m)) if m.contains("coarse.views")));
        assert!(matches!(RunConfig::parse("vsr.resolution = 34"), Err(CliError::Config(m)) if m.contains("divisible")));
        assert!(matches!(RunConfig::parse("pipeline.stop_after = never"), Err(CliError::Config(_))));
        let mut cfg = RunConfig::preset("desk").unwrap();
        assert!(cfg.set("nope", "1").is_err());
        cfg.apply_overrides(&["coarse.views=2".into(), "pipeline.coarse_source = corrupted".into()]).unwrap();
        assert_eq!(cfg.coarse.views, 2);
        assert_eq!(cfg.pipeline.coarse_source, CoarseSource::Corrupted);
        assert!(matches!(cfg.apply_overrides(&["novalue".into()]), Err(CliError::Usage(_))));
    }
}
