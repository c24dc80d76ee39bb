//! Versioned JSON checkpoint container shared by all trainable models.
//!
//! A checkpoint stores the model kind, the grid it was built for, its
//! hyperparameters, and a flat name-to-tensor parameter map. Loading
//! validates all of the envelope before any parameter is touched, so a
//! stale or foreign file fails loudly instead of half-loading.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::ArrayD;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::GridSpec;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub grid: GridSpec,
    pub config: serde_json::Value,
    pub params: BTreeMap<String, ArrayD<f64>>,
}

impl Checkpoint {
    pub fn new<C: Serialize>(
        kind: &str,
        grid: GridSpec,
        config: &C,
        params: BTreeMap<String, ArrayD<f64>>,
    ) -> Result<Self> {
        let config = serde_json::to_value(config)
            .map_err(|e| Error::data(format!("unserializable config: {e}")))?;
        Ok(Checkpoint {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            grid,
            config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::data(format!("checkpoint serialization failed: {e}")))?;
        fs::write(path, json)
            .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_str(&json)
            .map_err(|e| Error::data(format!("malformed checkpoint {}: {e}", path.display())))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::data(format!(
                "checkpoint {} has format version {}, expected {FORMAT_VERSION}",
                path.display(),
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    /// Envelope check: right kind of model, built for the right grid.
    pub fn validate(&self, kind: &str, grid: &GridSpec) -> Result<()> {
        if self.kind != kind {
            return Err(Error::data(format!(
                "checkpoint holds a {:?} model, expected {kind:?}",
                self.kind
            )));
        }
        if &self.grid != grid {
            return Err(Error::data(format!(
                "checkpoint grid {}x{} (n={}) does not match requested {}x{} (n={})",
                self.grid.image_height,
                self.grid.image_width,
                self.grid.grid_n,
                grid.image_height,
                grid.image_width,
                grid.grid_n
            )));
        }
        Ok(())
    }

    pub fn config_as<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| Error::data(format!("checkpoint config mismatch: {e}")))
    }
}
