use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blur::BlurConfig;
use crate::consistency::EdgeThreshold;
use crate::error::{Error, Result};
use crate::event_sim::{EventSimConfig, NoiseConfig};
use crate::fusion::ChannelPlan;
use crate::metrics::LossWeights;
use crate::tensor::Precision;
use crate::voxel::DEFAULT_BINS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory holding `<scene>_vis.pgm` / `<scene>_nir.pgm` pairs.
    pub input: PathBuf,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { input: PathBuf::from("scenes"), output: PathBuf::from("out") }
    }
}

/// Network widths; the event-branch input width is `voxel_bins`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub attn_dim: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let plan = ChannelPlan::default();
        Self { base_channels: plan.base, attn_dim: plan.attn_dim }
    }
}

/// Everything that determines a synthetic dataset. The nested `seed` fields of
/// `blur` and `noise` act as extra salts on top of the per-sample seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub crop_width: usize,
    pub crop_height: usize,
    pub trajectories: usize,
    pub voxel_bins: usize,
    /// Fraction of scenes assigned to the test split.
    pub test_fraction: f64,
    pub precision: Precision,
    pub edge_threshold: EdgeThreshold,
    pub paths: PathsConfig,
    pub blur: BlurConfig,
    pub events: EventSimConfig,
    pub noise: NoiseConfig,
    pub loss: LossWeights,
    pub network: NetworkConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            crop_width: 320,
            crop_height: 256,
            trajectories: 20,
            voxel_bins: DEFAULT_BINS,
            test_fraction: 0.13,
            precision: Precision::F32,
            edge_threshold: EdgeThreshold::default(),
            paths: PathsConfig::default(),
            blur: BlurConfig::default(),
            events: EventSimConfig::default(),
            noise: NoiseConfig::default(),
            loss: LossWeights::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always representable")
    }

    pub fn channel_plan(&self) -> ChannelPlan {
        ChannelPlan { base: self.network.base_channels, bins: self.voxel_bins, attn_dim: self.network.attn_dim }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if self.crop_width == 0 || self.crop_height == 0 {
            return cfg_err(format!("crop {}x{} must be non-empty", self.crop_width, self.crop_height));
        }
        if self.trajectories == 0 {
            return cfg_err("trajectories must be at least 1".into());
        }
        if self.trajectories > 100 {
            return cfg_err(format!("trajectories = {} exceeds the two-digit sample id limit", self.trajectories));
        }
        if self.voxel_bins == 0 {
            return cfg_err("voxel_bins must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return cfg_err(format!("test_fraction {} must lie in [0, 1]", self.test_fraction));
        }
        let nested = [
            self.blur.validate(),
            self.events.validate(),
            self.noise.validate(),
            self.loss.validate(),
            self.channel_plan().validate(),
        ];
        for r in nested {
            r.map_err(|e| Error::Config(e.to_string()))?;
        }
        if let EdgeThreshold::Fixed(t) = self.edge_threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return cfg_err(format!("edge threshold {t} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}
