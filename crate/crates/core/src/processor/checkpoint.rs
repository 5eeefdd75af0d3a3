//! Versioned JSON model checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ProcessorParams;
use crate::error::{Error, Result};
use crate::rewiring::RewireParams;

pub const CHECKPOINT_FORMAT: &str = "meshrewire-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub rewire: RewireParams,
    pub params: ProcessorParams,
    /// Mean epoch loss recorded during training.
    #[serde(default)]
    pub loss_curve: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: ProcessorParams, rewire: RewireParams, loss_curve: Vec<f64>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            rewire,
            params,
            loss_curve,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!("not a checkpoint: format '{}'", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", self.version)));
        }
        self.params.validate()?;
        self.rewire.validate()?;
        if self.rewire.layers != self.params.config.layers {
            return Err(Error::invariant("rewire.layers", "does not match the model depth"));
        }
        if !self.params.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json_string();
        text.push('\n');
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
