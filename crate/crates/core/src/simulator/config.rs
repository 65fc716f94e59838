use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_core::EventCameraConfig;
use crate::pixel_model::PixelBandwidthParams;

use super::{Radiometry, SimOptions};

/// Everything `simulate` needs apart from the scene, as one TOML document
/// with `[pixel]`, `[camera]`, `[radiometry]` and `[sim]` tables. Missing
/// tables take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub pixel: PixelBandwidthParams,
    pub camera: EventCameraConfig,
    pub radiometry: Radiometry,
    pub sim: SimOptions,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.pixel.validate()?;
        self.camera.validate()?;
        self.radiometry.validate()?;
        self.sim.validate()
    }
}
