use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::write_atomic;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::trainer::TrainState;

pub const CHECKPOINT_MAGIC: &str = "MODPOOL-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters (values and optimizer moments, keyed by name), configuration
/// and training progress including the RNG. Files start with a
/// `MODPOOL-CHECKPOINT <version>` line followed by JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub store: ParamStore,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = format!("{CHECKPOINT_MAGIC} {}\n", self.version).into_bytes();
        serde_json::to_writer(&mut out, self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::Checkpoint("not UTF-8".into()))?;
        let (header, body) = text
            .split_once('\n')
            .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
        let version = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| Error::Checkpoint(format!("bad header `{header}`")))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {version} not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mut ckpt: Checkpoint = serde_json::from_str(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.version != version {
            return Err(Error::Checkpoint("header and body versions differ".into()));
        }
        ckpt.store.reindex();
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
