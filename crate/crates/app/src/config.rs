//! Service configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use canopy_inventory::VitalityScale;
use serde::Deserialize;

use crate::tiles::LayerConfig;

/// ```toml
/// store = "inventory"
/// bind = "127.0.0.1:8080"
/// crs = "EPSG:25832"
///
/// [layers.ortho]
/// path = "ortho.tif"
/// kind = "rgb"
///
/// [layers.ndvi]
/// path = "ndvi.tif"
/// kind = "ndvi"
/// ```
///
/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub store: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: String,
    /// CRS of the cadastre; also the default for rows without one.
    #[serde(default = "default_crs")]
    pub crs: String,
    #[serde(default)]
    pub vitality: VitalityScale,
    #[serde(default)]
    pub layers: BTreeMap<String, LayerConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_crs() -> String {
    "unknown".into()
}

impl AppConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let mut cfg: AppConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.into();
        if cfg.store.is_relative() {
            cfg.store = cfg.base_dir.join(&cfg.store);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| canopy_core::Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }
}
