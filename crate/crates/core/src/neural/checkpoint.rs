//! JSON checkpoints. Floats are written in shortest round-trip form and read
//! back bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "shiftbench-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub models: Vec<ModelParams>,
}

pub fn save_models(path: impl AsRef<Path>, models: &[ModelParams]) -> Result<()> {
    let path = path.as_ref();
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        models: models.to_vec(),
    };
    let text = serde_json::to_string(&ckpt)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_models(path: impl AsRef<Path>) -> Result<Vec<ModelParams>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            ckpt.format,
            ckpt.version
        )));
    }
    for m in &ckpt.models {
        check_params(m).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    Ok(ckpt.models)
}

/// Rejects deserialized parameters whose arrays disagree with their
/// architecture or contain non-finite values.
pub fn check_params(m: &ModelParams) -> Result<()> {
    m.arch.validate()?;
    let sizes = m.arch.sizes();
    let shapes_ok = m.layers.len() + 1 == sizes.len()
        && m.layers
            .iter()
            .zip(sizes.windows(2))
            .all(|(l, io)| l.in_dim == io[0] && l.out_dim == io[1])
        && m.layers.iter().all(|l| {
            l.weight.len() == l.in_dim * l.out_dim
                && l.bias.len() == l.out_dim
                && l.weight_rho
                    .as_ref()
                    .is_none_or(|r| r.len() == l.weight.len())
                && l.bias_rho.as_ref().is_none_or(|r| r.len() == l.bias.len())
        });
    if !shapes_ok || !m.is_finite() {
        return Err(Error::Config("corrupt parameter arrays".into()));
    }
    Ok(())
}
