//! JSON model checkpoints.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "dmkit-checkpoint-v1";

/// A serialized model together with the digest of the training config that
/// produced it (absent for untrained or hand-specified models).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub format: String,
    pub model: M,
    pub train_config_digest: Option<String>,
}

impl<M: Serialize + DeserializeOwned> Checkpoint<M> {
    pub fn new(model: M, train_config_digest: Option<String>) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            model,
            train_config_digest,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        let c: Checkpoint<M> = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if c.format != FORMAT {
            return Err(Error::Integrity(format!("unsupported checkpoint format '{}'", c.format)));
        }
        Ok(c)
    }
}
