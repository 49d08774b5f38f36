use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LISTEN_ADDR: &str = "127.0.0.1:8750";

/// Store locations and service address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub catalog_path: PathBuf,
    pub data_root: PathBuf,
    pub cache_root: PathBuf,
    pub listen_addr: String,
}

impl Default for Config {
    fn default() -> Self {
        Config::under("cdb-data")
    }
}

impl Config {
    /// Everything below one directory.
    pub fn under(root: impl AsRef<Path>) -> Config {
        let root = root.as_ref();
        Config {
            catalog_path: root.join("catalog.sqlite"),
            data_root: root.join("data"),
            cache_root: root.join("cache"),
            listen_addr: DEFAULT_LISTEN_ADDR.to_string(),
        }
    }

    /// Reads a JSON config file. Relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Storage(format!("config {}: {e}", path.display())))?;
        let mut cfg: Config = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            for p in [
                &mut cfg.catalog_path,
                &mut cfg.data_root,
                &mut cfg.cache_root,
            ] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Environment that points `cdb` child processes at this store.
    pub fn env_vars(&self) -> Vec<(&'static str, String)> {
        vec![
            ("CDB_CATALOG_PATH", self.catalog_path.display().to_string()),
            ("CDB_DATA_ROOT", self.data_root.display().to_string()),
            ("CDB_CACHE_ROOT", self.cache_root.display().to_string()),
        ]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
