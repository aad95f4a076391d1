use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, CliError, ErrorKind};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Record written next to the outputs of every run. `config` holds the
/// fully resolved settings, so replaying needs nothing else but the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, serde_json::Value>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::new(ErrorKind::Io, e))?;
        text.push('\n');
        write_file(path, &text)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = read_file(path, ErrorKind::Config)?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

/// Default manifest location for a run whose main output is `output`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
