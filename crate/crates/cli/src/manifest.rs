use std::fs;
use std::path::{Path, PathBuf};

use laminate_core::Result;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Record of one command run. Contains no timestamps or absolute paths, so
/// identical inputs give an identical manifest.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub input: String,
    pub input_sha256: String,
    pub config: Value,
    pub outputs: Vec<OutputFile>,
    /// Hash over every other field.
    pub manifest_sha256: String,
}

/// Writes files into one directory and remembers each for the manifest.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        fs::write(self.root.join(name), contents)?;
        self.written.push(OutputFile {
            file: name.to_string(),
            bytes: contents.len(),
            sha256: sha256_hex(contents),
        });
        Ok(())
    }

    /// Writes `manifest.json` and returns it.
    pub fn finish(
        self,
        command: &'static str,
        input: &Path,
        input_bytes: &[u8],
        config: Value,
    ) -> Result<RunManifest> {
        let mut manifest = RunManifest {
            tool: "laminate",
            version: env!("CARGO_PKG_VERSION"),
            command,
            input: input.display().to_string(),
            input_sha256: sha256_hex(input_bytes),
            config,
            outputs: self.written,
            manifest_sha256: String::new(),
        };
        let body = serde_json::to_vec(&manifest).expect("manifest serializes");
        manifest.manifest_sha256 = sha256_hex(&body);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(manifest)
    }
}
