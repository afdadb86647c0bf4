//! Run-configuration file: a JSON mirror of the decode command's flags, so
//! runs can be pinned in version control. Command-line flags override file
//! values; unknown keys are rejected to catch typos.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model directory to load.
    pub model: Option<String>,
    /// Or generate a model on the fly from this seed...
    pub gen_seed: Option<u64>,
    /// ...with this shape.
    pub n_unique: Option<usize>,
    pub groups: Option<usize>,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub max_decode_length: Option<usize>,
    /// Prompt as a byte string...
    pub prompt: Option<String>,
    /// ...or as explicit token ids.
    pub prompt_ids: Option<Vec<TokenId>>,
    /// "greedy", "speed", or "both".
    pub decoder: Option<String>,
    pub trace_out: Option<String>,
    pub csv_out: Option<String>,
    /// Cost-model byte parameters for reporting.
    pub bytes_per_layer: Option<f64>,
    pub bytes_embedding: Option<f64>,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::File(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        kind: "config",
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn save_run_config(config: &RunConfig, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(config).map_err(|e| Error::Format {
        kind: "config",
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    fs::write(path, json + "\n").map_err(|e| Error::File(path.display().to_string(), e))
}
