//! Versioned JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "imb-lab-checkpoint",
//!   "version": 1,
//!   "epoch": 5000,
//!   "config": { ...training configuration... },
//!   "run": { ...optional front-end run description... },
//!   "params": {
//!     "input_dim": 12,
//!     "layers": [ { "encoder": { "weights": { "rows": 10, "cols": 12, "data": [...] },
//!                                "bias": [...] },
//!                   "marginal_logits": [...] }, ... ],
//!     "head": { "weights": { "rows": 2, "cols": 4, "data": [...] }, "bias": [...] }
//!   }
//! }
//! ```
//!
//! Matrices are row-major; `weights.rows` is the output width. Floats are
//! written in shortest round-trip form, so a save/load cycle is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ImbError, Result};
use crate::net::NetworkParams;
use crate::training::ImbConfig;

pub const CHECKPOINT_FORMAT: &str = "imb-lab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub epoch: usize,
    pub config: ImbConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
    pub params: NetworkParams,
}

impl Checkpoint {
    pub fn new(epoch: usize, config: ImbConfig, params: NetworkParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            epoch,
            config,
            run: None,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ensure!(ck.format == CHECKPOINT_FORMAT, Contract, "not a checkpoint: format is `{}`", ck.format);
        ensure!(
            ck.version == CHECKPOINT_VERSION,
            Contract,
            "checkpoint version {} is not supported (expected {})",
            ck.version,
            CHECKPOINT_VERSION
        );
        ck.params.validate()?;
        ensure!(
            ck.params.hidden_widths() == ck.config.hidden_widths,
            Contract,
            "checkpoint parameters have widths {:?}, its config says {:?}",
            ck.params.hidden_widths(),
            ck.config.hidden_widths
        );
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| ImbError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ImbError::io(path, e))?;
        Self::from_json(&text)
    }
}
