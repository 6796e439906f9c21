use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Record of how an output directory was produced.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub timestamp: String,
    pub tool_version: String,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, out: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_paths: Vec::new(),
            seed: None,
            output_dir: out.to_path_buf(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            files: Vec::new(),
        }
    }

    pub fn configs<'a>(mut self, paths: impl IntoIterator<Item = &'a Option<PathBuf>>) -> Self {
        self.config_paths.extend(paths.into_iter().flatten().cloned());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Output directory that records what is written into it.
pub struct OutDir {
    dir: PathBuf,
    manifest: RunManifest,
}

impl OutDir {
    pub fn create(manifest: RunManifest) -> Result<Self, CliError> {
        let dir = manifest.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        Ok(OutDir { dir, manifest })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        self.manifest.files.push(name.to_string());
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest).map_err(CliError::runtime)?;
        self.write("manifest.json", text + "\n")
    }
}
