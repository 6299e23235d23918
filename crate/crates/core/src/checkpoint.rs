//! JSON checkpoints for trained networks.
//!
//! Both the basis set and the baseline are stored as a list of networks plus
//! integrator settings; the `kind` tag keeps one from being loaded as the other.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Mlp, MlpRecord};
use crate::ode::Rk4;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format_version: u32,
    pub kind: String,
    pub k: usize,
    pub substeps: usize,
    pub nets: Vec<MlpRecord>,
}

impl CheckpointFile {
    pub fn new(kind: &str, nets: &[Mlp], integrator: Rk4) -> Self {
        CheckpointFile {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            k: nets.len(),
            substeps: integrator.substeps,
            nets: nets.iter().map(Mlp::to_record).collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Reads and validates a checkpoint of the given `kind`.
    pub fn read(path: &Path, kind: &str) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: corrupt checkpoint: {e}", path.display())))?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "{}: format version {v}, expected {FORMAT_VERSION}",
                    path.display()
                )))
            }
            None => return Err(Error::Checkpoint(format!("{}: missing format_version", path.display()))),
        }
        let file: CheckpointFile =
            serde_json::from_value(raw).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if file.kind != kind {
            return Err(Error::Checkpoint(format!(
                "{}: holds a '{}' model, expected '{kind}'",
                path.display(),
                file.kind
            )));
        }
        if file.k != file.nets.len() || file.k == 0 {
            return Err(Error::Checkpoint(format!(
                "{}: k = {} but {} networks stored",
                path.display(),
                file.k,
                file.nets.len()
            )));
        }
        if file.substeps == 0 {
            return Err(Error::Checkpoint(format!("{}: substeps must be positive", path.display())));
        }
        Ok(file)
    }

    pub fn integrator(&self) -> Rk4 {
        Rk4 {
            substeps: self.substeps,
        }
    }

    pub fn networks(&self) -> Result<Vec<Mlp>> {
        self.nets
            .iter()
            .map(|r| Mlp::from_record(r).map_err(|e| Error::Checkpoint(e.to_string())))
            .collect()
    }
}
