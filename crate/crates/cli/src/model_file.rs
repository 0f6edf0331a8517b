//! TOML serialisation of a fitted model.

use std::path::Path;

use ergi_core::estimation::FitResult;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::io::VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the RV file the model was fitted on.
    pub data_sha256: String,
    pub n_days: usize,
    pub window: Option<usize>,
    pub fit: FitResult,
}

impl ModelFile {
    pub fn new(fit: FitResult, seed: u64, data: &[u8], window: Option<usize>) -> Self {
        Self {
            version: VERSION.to_string(),
            seed,
            data_sha256: hex::encode(Sha256::digest(data)),
            n_days: fit.n_days,
            window,
            fit,
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Numerical(format!("cannot serialise model: {e}")))
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Data(format!("model file: {e}")))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }
}
