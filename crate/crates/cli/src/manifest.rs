use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

pub const TOOL_VERSION: &str = concat!("anyskin ", env!("CARGO_PKG_VERSION"));

/// Record of one run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: Value,
    pub seed: u64,
    pub tool_version: &'static str,
    pub outputs: Vec<PathBuf>,
    /// Subcommand-specific results such as accuracies or frame counts.
    pub summary: Value,
    /// Wall clock; the only field that differs between identical runs.
    pub duration_s: f64,
}

/// Where the manifest for a primary output goes: inside an output
/// directory, or beside an output file.
pub fn manifest_path(primary: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        return primary.join("manifest.json");
    }
    let mut name = primary.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
