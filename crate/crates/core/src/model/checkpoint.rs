//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! reloaded model reproduces inference bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};
use crate::neuralnet::AdamState;
use crate::preprocess::{InputScalers, QuantileScaler};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub transformer: String,
    pub model: ModelParams,
    pub optimizer: Option<AdamState>,
}

/// Normalization values stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerSidecar {
    pub input: InputScalers,
    pub quantile: Option<QuantileScaler>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("scalers.json")
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint, quantile: Option<QuantileScaler>) -> Result<()> {
    let path = path.as_ref();
    let body = serde_json::to_string(ckpt).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(path, body).map_err(|e| Error::io(path, e))?;
    let sidecar = ScalerSidecar {
        input: ckpt.model.scalers.clone(),
        quantile,
    };
    let side = sidecar_path(path);
    let body = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(&side, body).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Checkpoint, Option<ScalerSidecar>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Schema(format!(
            "{}: checkpoint version {} (expected {CHECKPOINT_VERSION})",
            path.display(),
            ckpt.version
        )));
    }
    ckpt.model.arch.validate()?;
    let side = sidecar_path(path);
    let sidecar = match fs::read_to_string(&side) {
        Ok(text) => Some(serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", side.display())))?),
        Err(_) => None,
    };
    Ok((ckpt, sidecar))
}
