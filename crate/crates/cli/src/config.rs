//! Config file schema. Every section is optional; command-line flags are
//! applied on top.
//!
//! ```toml
//! seed = 0
//! [model]      # ModelConfig fields
//! [train]      # TrainConfig fields
//! [synthetic]  # SynthConfig fields
//! [good4cir]   # PipelineConfig fields
//! ```

use std::path::Path;

use cir_core::datagen::good4cir::PipelineConfig;
use cir_core::datagen::synthetic::SynthConfig;
use cir_core::model::ModelConfig;
use cir_core::train::TrainConfig;
use cir_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synthetic: SynthConfig,
    pub good4cir: PipelineConfig,
}

impl RunFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Overwrites `$dst` with each flag that was given.
macro_rules! apply {
    ($dst:expr, $args:expr, $($field:ident),* $(,)?) => {
        $(if let Some(v) = $args.$field.clone() { $dst.$field = v; })*
    };
}
pub(crate) use apply;
